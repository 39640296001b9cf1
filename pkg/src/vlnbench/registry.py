"""Factory registry for models, agent configurations and tasks."""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from .errors import DuplicateId, UnknownComponent, UnknownKind

KINDS = ("model", "agent", "task")


@dataclass
class BuildContext:
    """What a constructor may see: the run config and the loaded worlds."""

    config: Any = None
    worlds: Mapping[str, Any] = field(default_factory=dict)


class Registry:
    def __init__(self):
        self._items: dict[str, dict[str, Callable]] = {k: {} for k in KINDS}
        self._lock = threading.Lock()

    def _table(self, kind: str) -> dict[str, Callable]:
        if kind not in self._items:
            raise UnknownKind(f"unknown component kind {kind!r}; expected one of {', '.join(KINDS)}")
        return self._items[kind]

    def register(self, kind: str, component_id: str, constructor: Callable) -> None:
        table = self._table(kind)
        with self._lock:
            if component_id in table:
                raise DuplicateId(f"{kind} {component_id!r} is already registered")
            table[component_id] = constructor

    def has(self, kind: str, component_id: str) -> bool:
        return component_id in self._table(kind)

    def resolve(self, kind: str, component_id: str) -> Callable:
        table = self._table(kind)
        try:
            return table[component_id]
        except KeyError:
            known = ", ".join(sorted(table)) or "none"
            raise UnknownComponent(f"no {kind} registered as {component_id!r} (known: {known})") from None

    def build(self, kind: str, component_id: str, ctx: BuildContext | None = None, **params):
        return self.resolve(kind, component_id)(ctx or BuildContext(), **params)

    def ids(self, kind: str) -> list[str]:
        return sorted(self._table(kind))


def _scripted(policy_name: str):
    def make(ctx: BuildContext, max_in_flight: int | None = None, **params):
        from .fixtures import scripted_policies
        from .models import ScriptedModel

        policies = scripted_policies(worlds=ctx.worlds, seed=params.pop("seed", 0))
        if params:
            raise TypeError(f"unexpected parameters for scripted model: {sorted(params)}")
        return ScriptedModel(policies[policy_name], backend_id=f"scripted:{policy_name}", max_in_flight=max_in_flight)

    return make


def _echo(ctx: BuildContext, **params):
    from .models import EchoModel

    return EchoModel(**params)


def _chat(ctx: BuildContext, **params):
    from .models import ChatCompletionsModel

    return ChatCompletionsModel(**params)


def _agent(agent_id: str):
    def make(ctx: BuildContext, oracle_assist: Mapping | None = None, failure_icl: Mapping | None = None):
        from dataclasses import replace

        from .agents.config import BUILTIN_AGENTS, FailureICL, OracleAssist

        cfg = BUILTIN_AGENTS[agent_id]
        return replace(
            cfg,
            oracle_assist=OracleAssist(**oracle_assist) if oracle_assist else None,
            failure_icl=FailureICL(**failure_icl) if failure_icl else None,
        )

    return make


def _task(name: str):
    def make(ctx: BuildContext):
        from .tasks import Granularity

        return Granularity(name)

    return make


BUILTIN_MODELS = {
    "echo": _echo,
    "openai-compatible": _chat,
    "scripted.optimal": _scripted("OptimalFollower"),
    "scripted.random": _scripted("RandomWalker"),
    "scripted.looper": _scripted("Looper"),
    "scripted.garbage": _scripted("GarbageEmitter"),
    "scripted.revise_once": _scripted("ReviseOnce"),
    "scripted.guided_looper": _scripted("GuidedLooper"),
    "scripted.route_oracle": _scripted("RouteOracle"),
}


def _install_builtins(reg: Registry) -> Registry:
    from .agents.config import BUILTIN_AGENTS

    for mid, ctor in BUILTIN_MODELS.items():
        reg.register("model", mid, ctor)
    for aid in BUILTIN_AGENTS:
        reg.register("agent", aid, _agent(aid))
    for t in ("fine", "coarse", "zero"):
        reg.register("task", t, _task(t))
    return reg


_default: Registry | None = None
_default_lock = threading.Lock()


def default_registry() -> Registry:
    global _default
    with _default_lock:
        if _default is None:
            _default = _install_builtins(Registry())
        return _default


def new_registry(with_builtins: bool = True) -> Registry:
    return _install_builtins(Registry()) if with_builtins else Registry()


def register_component(kind: str, component_id: str, constructor: Callable, registry: Registry | None = None) -> None:
    (registry or default_registry()).register(kind, component_id, constructor)
