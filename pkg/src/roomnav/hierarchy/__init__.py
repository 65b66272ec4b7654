from .abstract import (
    ENHANCEMENTS,
    NEW_ROOM_REWARD,
    SLACK_PENALTY,
    AbstractRoomEnv,
    AbstractRoomState,
    abstract_step,
    best_coverage_return,
    meta_reward,
    one_hop,
    room_view,
)
from .agents import (
    CompositionError,
    ControllerAgent,
    FlatAgent,
    GaGate,
    HierarchicalAgent,
    compose_agent,
    never_gate,
    oracle_gate,
)
from .training import (
    FrozenMetaEnv,
    evaluate_coverage,
    load_controller,
    object_set,
    plans_for,
    train_controller,
    train_flat,
    train_meta_coverage,
    train_meta_frozen,
)
