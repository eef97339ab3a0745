"""Coordinated task runs on top of the switchboard.

The planner decomposes a task into a versioned plan, workers post results,
the critique validates them, the answer finder compiles a candidate that the
participants vote on, and an accepted candidate is submitted as the final
answer.  Runs that exhaust their options submit a "give up: ..." answer
instead of hanging.
"""

from .bodies import (
    encode_assignment,
    encode_critique_body,
    encode_plan_body,
    parse_assignment,
    parse_critique_body,
    parse_plan_body,
)
from .consensus import decide_consensus, policy_from_wire, policy_to_wire, quorum_size
from .roles import (
    AnswerMachine,
    CritiqueMachine,
    PlannerMachine,
    Reaction,
    Reasoner,
    Roster,
    SubtaskResult,
    WorkerMachine,
    compile_candidate,
    submit_final,
)
from .runner import (
    NullReasoner,
    RunLimits,
    TaskRun,
    build_machines,
    discover,
    resolve_roles,
    run_task,
)

__all__ = [
    "encode_assignment",
    "encode_critique_body",
    "encode_plan_body",
    "parse_assignment",
    "parse_critique_body",
    "parse_plan_body",
    "decide_consensus",
    "policy_from_wire",
    "policy_to_wire",
    "quorum_size",
    "AnswerMachine",
    "CritiqueMachine",
    "PlannerMachine",
    "Reaction",
    "Reasoner",
    "Roster",
    "SubtaskResult",
    "WorkerMachine",
    "compile_candidate",
    "submit_final",
    "NullReasoner",
    "RunLimits",
    "TaskRun",
    "build_machines",
    "discover",
    "resolve_roles",
    "run_task",
]
