"""Turn-based network defence simulation with hierarchical, controller-routed defenders."""

from .adversaries import AdversaryKind, sample_adversary
from .controllers import BanditTable, bandit_predict, bandit_train, bandit_update, heuristic_predict, window_key
from .defence import DecoyWallPolicy, GreedyRestorePolicy, HierarchicalDefender, SleepPolicy
from .explain import FeatureMask, ablate, build_graph, classify_by_connectivity, emit_dot
from .harness import RunConfig, eval_controller_accuracy, run_ablation, run_episodes, stats
from .sim import BlueAction, BlueObservation, RedAction, compute_reward, reset, step
from .topology import default_topology, reachable

__version__ = "0.1.0"
