"""Role state machines: planner, critique, answer finder, worker.

Each machine owns the protocol reflexes of its role (who to mention, when a
reply is owed, what the body must look like) and delegates all judgement to a
pluggable reasoner with a single method: react(trigger) -> Reaction | None.
Returning None means "no opinion"; each machine applies its mechanical
default in that case.  A Reaction with delay=None means the agent never acts
on that trigger (scripted unresponsiveness).  A reasoner that raises is
treated as a failed tool: workers report "error: ..." results, the critique
reports an uncertain verdict.

Machines are transport agnostic.  They act through an Acts adapter and are
driven from outside with on_message(msg) for every delivered mention and
on_tick(now) for timers.  Times are whatever unit the adapter's clock uses
(milliseconds live, ticks in the simulator).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Protocol

from ..errors import (
    MAX_ROUNDS_EXCEEDED,
    NO_VALIDATED_RESULTS,
    PLANNER_FAILED,
    SUBMIT_WITHOUT_CONSENSUS,
    THREAD_CLOSED,
    ProtocolError,
)
from ..model import (
    ConsensusDecision,
    ConsensusPolicy,
    CritiqueVerdict,
    Message,
    Plan,
    PlanStep,
    ThreadInfo,
    Vote,
)
from . import bodies
from .consensus import decide_consensus

GAVE_UP_SUMMARY = "gave up"
SUBMITTED_SUMMARY_PREFIX = "answer submitted: "


@dataclass(frozen=True)
class Reaction:
    """What a reasoner wants to say in response to a trigger message."""

    body: str
    kind: str = "chat"
    mentions: tuple[str, ...] = ()
    delay: int | None = 0


class Reasoner(Protocol):
    def react(self, trigger: Message) -> Reaction | None: ...


class Acts(Protocol):
    """Side effects a role machine is allowed to perform."""

    agent: str

    def now(self) -> int: ...

    def send(
        self, thread: str, kind: str, body: str, mentions: tuple[str, ...] = ()
    ) -> Message: ...

    def create_thread(self, participants: list[str]) -> str: ...

    def add_participant(self, thread: str, agent: str) -> None: ...

    def close_thread(self, thread: str, summary: str) -> None: ...

    def transcript(self, thread: str) -> tuple[ThreadInfo, tuple[Message, ...]]: ...


@dataclass(frozen=True)
class Roster:
    """Which registered agent holds which role for one task run."""

    planner: str
    critique: str
    answer: str
    workers: tuple[str, ...]


@dataclass(frozen=True)
class SubtaskResult:
    worker: str
    step_id: str
    body: str
    seq: int


class RoleMachine:
    def __init__(self, acts: Acts, reasoner: Reasoner) -> None:
        self.acts = acts
        self.reasoner = reasoner
        self.done = False
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._qcount = 0

    @property
    def agent(self) -> str:
        return self.acts.agent

    def _schedule(self, delay: int, thunk: Callable[[], None]) -> None:
        self._queue.append((self.acts.now() + max(0, delay), self._qcount, thunk))
        self._qcount += 1

    def next_due(self) -> int | None:
        dues = [due for due, _, _ in self._queue]
        dues.extend(self._deadline_times())
        return min(dues) if dues else None

    def _deadline_times(self) -> list[int]:
        return []

    def on_tick(self, now: int) -> int:
        """Fire due reactions and deadlines; returns how many actions ran."""
        if self.done:
            return 0
        acted = 0
        ready = sorted(
            (e for e in self._queue if e[0] <= now), key=lambda e: (e[0], e[1])
        )
        if ready:
            self._queue = [e for e in self._queue if e[0] > now]
            for _, _, thunk in ready:
                if self.done:
                    return acted
                thunk()
                acted += 1
        return acted + self._check_deadlines(now)

    def _check_deadlines(self, now: int) -> int:
        return 0

    def on_message(self, msg: Message) -> None:
        raise NotImplementedError

    def _react(self, trigger: Message) -> Reaction | None | Exception:
        try:
            return self.reasoner.react(trigger)
        except Exception as exc:  # a broken reasoner must not kill the run
            return exc

    def _safe_send(
        self, thread: str, kind: str, body: str, mentions: tuple[str, ...] = ()
    ) -> Message | None:
        try:
            return self.acts.send(thread, kind, body, mentions)
        except ProtocolError as exc:
            if exc.code == THREAD_CLOSED:
                self.done = True
                return None
            raise

    def _safe_close(self, thread: str, summary: str) -> None:
        try:
            self.acts.close_thread(thread, summary)
        except ProtocolError as exc:
            if exc.code != THREAD_CLOSED:
                raise

    def _cast_vote(self, planner: str, cand: Message) -> None:
        if cand.body.startswith(bodies.GIVE_UP_PREFIX):
            return
        rx = self._react(cand)
        if isinstance(rx, Exception):
            rx = None
        if rx is not None and rx.delay is None:
            return
        if rx is not None and rx.kind != "vote":
            mentions = rx.mentions or (planner,)
            reaction = rx
            self._schedule(
                reaction.delay,
                lambda: self._safe_send(
                    cand.thread, reaction.kind, reaction.body, mentions
                ),
            )
            return
        value = rx.body if rx is not None else "approve"
        delay = rx.delay if rx is not None else 0
        self._schedule(
            delay, lambda: self._safe_send(cand.thread, "vote", value, (planner,))
        )

    def _freeform(self, planner: str, msg: Message) -> None:
        rx = self._react(msg)
        if isinstance(rx, Exception) or rx is None or rx.delay is None:
            return
        mentions = rx.mentions or (planner,)
        reaction = rx
        self._schedule(
            reaction.delay,
            lambda: self._safe_send(msg.thread, reaction.kind, reaction.body, mentions),
        )


class WorkerMachine(RoleMachine):
    """Executes its allocated steps in order, one result message per step."""

    def __init__(
        self, acts: Acts, reasoner: Reasoner, planner: str, critique: str
    ) -> None:
        super().__init__(acts, reasoner)
        self.planner = planner
        self.critique = critique
        self._steps: list[PlanStep] = []
        self._generation = 0

    def on_message(self, msg: Message) -> None:
        if self.done:
            return
        if msg.kind == "candidate":
            self._cast_vote(self.planner, msg)
            return
        steps = bodies.parse_assignment(msg.body)
        if msg.sender == self.planner and steps:
            self._generation += 1
            self._steps = steps
            self._work(msg)
            return
        self._freeform(self.planner, msg)

    def _work(self, origin: Message) -> None:
        if not self._steps:
            return
        step = self._steps[0]
        trigger = dataclasses.replace(
            origin, body=f"step {step.id}: {step.description}"
        )
        rx = self._react(trigger)
        if isinstance(rx, Exception):
            rx = Reaction(body=f"error: {rx}")
        if rx is None or rx.delay is None:
            return
        gen = self._generation
        reaction = rx

        def fire() -> None:
            if self._generation != gen:
                return
            self._steps.pop(0)
            self._safe_send(
                origin.thread, "result", reaction.body, (self.critique, self.planner)
            )
            if not self.done:
                self._work(origin)

        self._schedule(reaction.delay, fire)


class CritiqueMachine(RoleMachine):
    """Reviews every result exactly once; verdicts name the reviewed seq.

    A result whose body starts with "error:" is never accepted, whatever the
    reasoner says: a failed subtask cannot validate anything.
    """

    def __init__(self, acts: Acts, reasoner: Reasoner, planner: str) -> None:
        super().__init__(acts, reasoner)
        self.planner = planner
        self._judged: set[tuple[str, int]] = set()

    def on_message(self, msg: Message) -> None:
        if self.done:
            return
        if msg.kind == "candidate":
            self._cast_vote(self.planner, msg)
            return
        if msg.kind == "result":
            key = (msg.thread, msg.seq)
            if key in self._judged:
                return
            self._judged.add(key)
            self._judge(msg)
            return
        self._freeform(self.planner, msg)

    def _judge(self, msg: Message) -> None:
        rx = self._react(msg)
        verdict, rationale = "accept", "no objection"
        delay = 0
        if isinstance(rx, Exception):
            verdict, rationale = "uncertain", "critique-internal-error"
        else:
            if rx is not None and rx.delay is None:
                return
            if rx is not None:
                delay = rx.delay
                split = _split_verdict(rx.body)
                if split is not None:
                    verdict, rationale = split
        if msg.body.startswith("error:") and verdict == "accept":
            verdict, rationale = "uncertain", "failed result"
        body = bodies.encode_critique_body(verdict, msg.seq, rationale)
        self._schedule(
            delay,
            lambda: self._safe_send(msg.thread, "critique", body, (self.planner,)),
        )


def _split_verdict(body: str) -> tuple[str, str] | None:
    for verdict in ("accept", "uncertain"):
        if body == verdict:
            return verdict, ""
        if body.startswith(verdict + ":"):
            return verdict, body[len(verdict) + 1 :].strip()
    return None


def accepted_result_seqs(messages: tuple[Message, ...]) -> set[int]:
    """Seqs of result messages with an accept verdict somewhere after them."""
    accepted: set[int] = set()
    for m in messages:
        if m.kind != "critique":
            continue
        verdict = bodies.parse_critique_body(m.body)
        if verdict is not None and verdict.verdict == "accept":
            accepted.add(verdict.target_seq)
    return {m.seq for m in messages if m.kind == "result" and m.seq in accepted}


def compile_candidate(
    acts: Acts, thread: str, give_up_reason: str | None = None
) -> Message:
    """Post the answer candidate: newest accepted result, or a give-up body.

    Raises NO_VALIDATED_RESULTS when there is nothing accepted to compile
    and no give-up determination was made.
    """
    info, messages = acts.transcript(thread)
    if give_up_reason is not None:
        answer = bodies.GIVE_UP_PREFIX + give_up_reason
    else:
        accepted = accepted_result_seqs(messages)
        if not accepted:
            raise ProtocolError(
                NO_VALIDATED_RESULTS, "no accepted results to compile from"
            )
        newest = max(accepted)
        answer = next(m.body for m in messages if m.seq == newest)
    polled = tuple(a for a in info.participants if a != acts.agent)
    return acts.send(thread, "candidate", answer, polled)


def submit_final(
    acts: Acts,
    thread: str,
    planner: str,
    candidate_seq: int,
    decision: ConsensusDecision | None,
) -> Message:
    """Post the submission for an accepted (or give-up) candidate and close.

    Raises SUBMIT_WITHOUT_CONSENSUS for a candidate that was not accepted
    and is not a give-up.
    """
    _, messages = acts.transcript(thread)
    answer: str | None = None
    for m in messages:
        if m.seq == candidate_seq and m.kind == "candidate":
            answer = m.body
    if answer is None:
        raise ProtocolError(
            SUBMIT_WITHOUT_CONSENSUS, f"no candidate at seq={candidate_seq}"
        )
    giving_up = answer.startswith(bodies.GIVE_UP_PREFIX)
    if not giving_up:
        accepted = (
            decision is not None
            and decision.outcome == "accepted"
            and decision.candidate_seq == candidate_seq
        )
        if not accepted:
            raise ProtocolError(
                SUBMIT_WITHOUT_CONSENSUS,
                f"candidate seq={candidate_seq} has no accepting decision",
            )
    sent = acts.send(thread, "submission", answer, (planner,))
    summary = GAVE_UP_SUMMARY if giving_up else SUBMITTED_SUMMARY_PREFIX + answer
    acts.close_thread(thread, summary)
    return sent


class AnswerMachine(RoleMachine):
    """Compiles candidates on request and performs the final submission."""

    def __init__(self, acts: Acts, reasoner: Reasoner, planner: str) -> None:
        super().__init__(acts, reasoner)
        self.planner = planner

    def on_message(self, msg: Message) -> None:
        if self.done:
            return
        if msg.sender == self.planner:
            if bodies.split_prefixed(msg.body, bodies.COMPILE_PREFIX) is not None:
                self._compile(msg, give_up_reason=None)
                return
            reason = bodies.split_prefixed(msg.body, bodies.COMPILE_GIVEUP_PREFIX)
            if reason is not None:
                self._compile(msg, give_up_reason=reason)
                return
            request = bodies.split_prefixed(msg.body, bodies.SUBMIT_PREFIX)
            if request is not None:
                self._submit(msg, request)
                return
        self._freeform(self.planner, msg)

    def _compile(self, msg: Message, give_up_reason: str | None) -> None:
        rx = self._react(msg)
        if isinstance(rx, Exception):
            rx = None
        if rx is not None and rx.delay is None:
            return
        delay = rx.delay if rx is not None else 0
        scripted = rx.body if rx is not None and rx.body else None

        def fire() -> None:
            if scripted is not None:
                info, _ = self.acts.transcript(msg.thread)
                polled = tuple(a for a in info.participants if a != self.agent)
                self._safe_send(msg.thread, "candidate", scripted, polled)
                return
            try:
                compile_candidate(self.acts, msg.thread, give_up_reason)
            except ProtocolError as exc:
                if exc.code == THREAD_CLOSED:
                    self.done = True
                elif exc.code == NO_VALIDATED_RESULTS:
                    self._safe_send(
                        msg.thread,
                        "chat",
                        "compile-failed: no validated results",
                        (self.planner,),
                    )
                else:
                    raise

        self._schedule(delay, fire)

    def _submit(self, msg: Message, request: str) -> None:
        # The planner's request is the consensus authorization; the strict
        # decision-carrying gate lives in submit_final for direct callers.
        target = _parse_seq_field(request)
        if target is None:
            return
        self._submit_vouched(msg.thread, target)
        self.done = True

    def _submit_vouched(self, thread: str, target: int) -> None:
        _, messages = self.acts.transcript(thread)
        answer = None
        for m in messages:
            if m.seq == target and m.kind == "candidate":
                answer = m.body
        if answer is None:
            return
        self._safe_send(thread, "submission", answer, (self.planner,))
        giving_up = answer.startswith(bodies.GIVE_UP_PREFIX)
        summary = GAVE_UP_SUMMARY if giving_up else SUBMITTED_SUMMARY_PREFIX + answer
        self._safe_close(thread, summary)


def _parse_seq_field(text: str) -> int | None:
    for token in text.split():
        if token.startswith("seq="):
            try:
                return int(token[4:])
            except ValueError:
                return None
    return None


class PlannerMachine(RoleMachine):
    """Drives a task run: plan, collect validated results, poll, finalize.

    Mechanical defaults when the reasoner has no opinion: the initial plan is
    a single step handed to the first worker; an uncertain verdict or an
    unresponsive worker drops the affected steps into the next plan version;
    a plan-kind contribution with the right next version is adopted; a
    rejected candidate gives up.  A reasoner reaction whose body parses as a
    plan replaces the default at any of those decision points.
    """

    def __init__(
        self,
        acts: Acts,
        reasoner: Reasoner,
        task: str,
        roster: Roster,
        policy: ConsensusPolicy,
        mention_timeout: int,
        vote_timeout: int,
        max_rounds: int,
    ) -> None:
        super().__init__(acts, reasoner)
        self.task = task
        self.roster = roster
        self.policy = policy
        self.mention_timeout = mention_timeout
        self.vote_timeout = vote_timeout
        self.max_rounds = max_rounds
        self.thread: str | None = None
        self.plan: Plan | None = None
        self.outcome: str | None = None
        self.answer: str | None = None
        self.results: dict[str, SubtaskResult] = {}
        self.verdicts: list[CritiqueVerdict] = []
        self.candidates: list[int] = []
        self.decisions: list[ConsensusDecision] = []
        self._phase = "draft"
        self._pending: dict[str, list[str]] = {}
        self._awaiting_verdict: dict[int, str] = {}
        self._validated: set[str] = set()
        self._deadlines: dict[tuple[str, ...], int] = {}
        self._candidate: Message | None = None
        self._polled: tuple[str, ...] = ()
        self._votes: dict[str, str] = {}
        self._give_up_reason = ""

    @property
    def rounds_used(self) -> int:
        return self.plan.version if self.plan is not None else 0

    def _deadline_times(self) -> list[int]:
        # Expiry is strict (now > due), so the first tick with any effect is
        # due + 1; next_due must report that tick for clock jumps to be safe.
        return [due + 1 for due in self._deadlines.values()]

    def start(self) -> None:
        plan = self._initial_plan()
        members = {self.roster.critique, self.roster.answer, *plan.allocation}
        self.thread = self.acts.create_thread(sorted(members))
        self._install_plan(plan, standby=True)

    def _initial_plan(self) -> Plan:
        trigger = Message(
            thread="",
            seq=0,
            sender=self.agent,
            kind="chat",
            body=self.task,
            mentions=(),
            ts_ms=self.acts.now(),
        )
        rx = self._react(trigger)
        if isinstance(rx, Exception):
            raise ProtocolError(PLANNER_FAILED, f"planner reasoner failed: {rx}")
        if rx is None:
            first = self.roster.workers[0]
            return Plan(
                version=0,
                goal=self.task,
                steps=(PlanStep("s1", self.task),),
                allocation={first: ("s1",)},
            )
        try:
            plan = bodies.parse_plan_body(rx.body)
        except ProtocolError as exc:
            raise ProtocolError(
                PLANNER_FAILED, f"reasoner produced an unusable plan: {exc.message}"
            ) from None
        if not plan.steps:
            raise ProtocolError(PLANNER_FAILED, "initial plan has no steps")
        return plan

    def _install_plan(self, plan: Plan, standby: bool = False) -> None:
        assert self.thread is not None
        previous = self.plan
        self.plan = plan
        self._phase = "run"
        self._candidate = None
        self._votes = {}
        self._polled = ()
        self._awaiting_verdict = {}
        self._deadlines = {}
        if self._safe_send(self.thread, "plan", bodies.encode_plan_body(plan)) is None:
            return
        if previous is not None:
            if not self._note_cancellations(previous, plan):
                return
        if standby:
            notice = (
                bodies.STANDBY_PREFIX
                + f"awaiting validated results for v{plan.version}"
            )
            if (
                self._safe_send(
                    self.thread,
                    "chat",
                    notice,
                    (self.roster.critique, self.roster.answer),
                )
                is None
            ):
                return
        info, _ = self.acts.transcript(self.thread)
        current = set(info.participants)
        self._pending = {}
        for worker in sorted(plan.allocation):
            todo = [
                sid for sid in plan.allocation[worker] if sid not in self._validated
            ]
            if not todo:
                continue
            self._pending[worker] = todo
            if worker not in current:
                self.acts.add_participant(self.thread, worker)
                current.add(worker)
            steps = [plan.step_by_id(sid) for sid in todo]
            if (
                self._safe_send(
                    self.thread, "chat", bodies.encode_assignment(steps), (worker,)
                )
                is None
            ):
                return
            self._deadlines[("result", worker)] = (
                self.acts.now() + self.mention_timeout
            )
        if not self._pending:
            if any(s.id in self._validated for s in plan.steps):
                self._request_compile()
            else:
                self._give_up("no validated results")

    def _note_cancellations(self, old: Plan, new: Plan) -> bool:
        owner: dict[str, str] = {}
        for worker, ids in new.allocation.items():
            for sid in ids:
                owner[sid] = worker
        superseded: list[tuple[str, str]] = []
        for worker, ids in sorted(old.allocation.items()):
            for sid in ids:
                if sid in self._validated:
                    continue
                if owner.get(sid) != worker:
                    superseded.append((sid, worker))
        if not superseded:
            return True
        superseded.sort()
        note = bodies.CANCELLED_PREFIX + ", ".join(
            f"{sid} ({worker})" for sid, worker in superseded
        )
        return self._safe_send(self.thread, "system", note) is not None

    def on_message(self, msg: Message) -> None:
        if self.done:
            return
        if msg.kind == "result":
            self._on_result(msg)
        elif msg.kind == "critique":
            self._on_critique(msg)
        elif msg.kind == "candidate" and msg.sender == self.roster.answer:
            self._on_candidate(msg)
        elif msg.kind == "vote":
            self._on_vote(msg)
        elif msg.kind == "submission" and msg.sender == self.roster.answer:
            self.answer = msg.body
            self.outcome = (
                "gave_up"
                if msg.body.startswith(bodies.GIVE_UP_PREFIX)
                else "submitted"
            )
            self._deadlines = {}
            self.done = True
        else:
            self._planner_consult(msg)

    def _on_result(self, msg: Message) -> None:
        todo = self._pending.get(msg.sender)
        if not todo:
            return
        step = todo.pop(0)
        self.results[step] = SubtaskResult(
            worker=msg.sender, step_id=step, body=msg.body, seq=msg.seq
        )
        self._awaiting_verdict[msg.seq] = step
        self._deadlines[("verdict", str(msg.seq))] = (
            self.acts.now() + self.mention_timeout
        )
        if todo:
            self._deadlines[("result", msg.sender)] = (
                self.acts.now() + self.mention_timeout
            )
        else:
            self._deadlines.pop(("result", msg.sender), None)

    def _on_critique(self, msg: Message) -> None:
        verdict = bodies.parse_critique_body(msg.body)
        if verdict is None:
            return
        step = self._awaiting_verdict.pop(verdict.target_seq, None)
        if step is None:
            return
        self.verdicts.append(verdict)
        self._deadlines.pop(("verdict", str(verdict.target_seq)), None)
        if verdict.verdict == "accept":
            self._validated.add(step)
            if self._all_validated() and self._phase == "run":
                if not self._consult_revision(msg):
                    self._request_compile()
        else:
            if not self._consult_revision(msg):
                self._drop_steps([step])

    def _all_validated(self) -> bool:
        assert self.plan is not None
        allocated = [sid for ids in self.plan.allocation.values() for sid in ids]
        return all(sid in self._validated for sid in allocated) and not any(
            self._pending.values()
        )

    def _on_candidate(self, msg: Message) -> None:
        if self._phase not in ("run", "compile", "giveup"):
            return
        self.candidates.append(msg.seq)
        self._candidate = msg
        self._deadlines.pop(("candidate",), None)
        if msg.body.startswith(bodies.GIVE_UP_PREFIX):
            self._request_submission(msg, "give-up")
            return
        self._phase = "vote"
        self._polled = tuple(sorted(set(msg.mentions) | {self.agent}))
        self._votes = {self.agent: "approve"}
        if self._safe_send(msg.thread, "vote", "approve") is None:
            return
        self._deadlines[("votes",)] = self.acts.now() + self.vote_timeout
        self._maybe_decide()

    def _request_submission(self, cand: Message, evidence: str) -> None:
        self._phase = "submit"
        request = bodies.SUBMIT_PREFIX + f"seq={cand.seq} {evidence}"
        if self._safe_send(cand.thread, "chat", request, (self.roster.answer,)):
            self._deadlines[("submission",)] = self.acts.now() + self.mention_timeout

    def _on_vote(self, msg: Message) -> None:
        if self._phase != "vote" or msg.sender not in self._polled:
            return
        self._votes.setdefault(msg.sender, msg.body)
        self._maybe_decide()

    def _maybe_decide(self, force: bool = False) -> None:
        if self._phase != "vote" or self._candidate is None:
            return
        if not force and len(self._votes) < len(self._polled):
            return
        self._deadlines.pop(("votes",), None)
        cand = self._candidate
        votes = tuple(
            Vote(voter=v, candidate_seq=cand.seq, value=val)
            for v, val in self._votes.items()
        )
        decision = decide_consensus(votes, self._polled, self.policy, cand.seq)
        self.decisions.append(decision)
        if decision.outcome == "accepted":
            evidence = (
                f"approvals={decision.approvals}"
                f" rejections={decision.rejections} quorum={decision.quorum}"
            )
            self._request_submission(cand, evidence)
            return
        marker = (
            bodies.REJECTED_PREFIX
            + f"seq={cand.seq} approvals={decision.approvals}"
            + f" rejections={decision.rejections}"
        )
        sent = self._safe_send(cand.thread, "progress", marker)
        if sent is None:
            return
        if not self._consult_revision(sent):
            self._give_up(f"consensus rejected candidate seq={cand.seq}")

    def _consult_revision(self, trigger: Message) -> bool:
        rx = self._react(trigger)
        if isinstance(rx, Exception) or rx is None or rx.delay is None:
            return False
        try:
            plan = bodies.parse_plan_body(rx.body)
        except ProtocolError:
            return False
        return self._adopt(plan)

    def _adopt(self, plan: Plan) -> bool:
        if self.plan is not None and plan.version <= self.plan.version:
            return False
        if plan.version > self.max_rounds:
            self._give_up("max rounds exceeded")
            return True
        self._install_plan(plan)
        return True

    def _drop_steps(self, step_ids: list[str]) -> None:
        assert self.plan is not None
        dropped = set(step_ids)
        version = self.plan.version + 1
        if version > self.max_rounds:
            self._give_up("max rounds exceeded")
            return
        steps = tuple(s for s in self.plan.steps if s.id not in dropped)
        if not steps:
            self._give_up("no validated results")
            return
        allocation = {
            w: tuple(sid for sid in ids if sid not in dropped)
            for w, ids in self.plan.allocation.items()
        }
        allocation = {w: ids for w, ids in allocation.items() if ids}
        plan = Plan(
            version=version, goal=self.plan.goal, steps=steps, allocation=allocation
        )
        self._install_plan(plan)

    def _planner_consult(self, msg: Message) -> None:
        if msg.kind == "plan" and self.plan is not None:
            if self._consult_revision(msg):
                return
            try:
                contributed = bodies.parse_plan_body(msg.body)
            except ProtocolError:
                return
            if contributed.version == self.plan.version + 1:
                self._adopt(contributed)
            return
        if msg.kind in ("suggestion", "chat", "progress"):
            if self._consult_revision(msg):
                return
        if msg.kind == "suggestion":
            return
        rx = self._react(msg)
        if isinstance(rx, Exception) or rx is None or rx.delay is None:
            return
        mentions = rx.mentions
        reaction = rx
        self._schedule(
            reaction.delay,
            lambda: self._safe_send(
                msg.thread, reaction.kind, reaction.body, mentions
            ),
        )

    def _request_compile(self) -> None:
        assert self.thread is not None and self.plan is not None
        self._phase = "compile"
        body = bodies.COMPILE_PREFIX + self.plan.goal
        if self._safe_send(self.thread, "chat", body, (self.roster.answer,)):
            self._deadlines[("candidate",)] = self.acts.now() + self.mention_timeout

    def _give_up(self, reason: str) -> None:
        assert self.thread is not None
        self.outcome = "gave_up"
        self._phase = "giveup"
        self._give_up_reason = reason
        self._deadlines = {}
        body = bodies.COMPILE_GIVEUP_PREFIX + reason
        if self._safe_send(self.thread, "chat", body, (self.roster.answer,)) is None:
            self.done = True
            return
        self._deadlines[("candidate",)] = self.acts.now() + self.mention_timeout

    def _check_deadlines(self, now: int) -> int:
        # Strictly past due only: a reply that lands at exactly the deadline
        # tick must be drained and counted before the window is declared shut.
        if self.done or self.thread is None:
            return 0
        fired = 0
        expired = sorted(
            (key for key, due in self._deadlines.items() if due < now),
            key=lambda k: (self._deadlines[k], k),
        )
        for key in expired:
            if self.done:
                return fired
            if key not in self._deadlines or self._deadlines[key] >= now:
                continue
            del self._deadlines[key]
            self._expire(key)
            fired += 1
        return fired

    def _expire(self, key: tuple[str, ...]) -> None:
        assert self.thread is not None
        if key[0] == "result":
            worker = key[1]
            stuck = self._pending.pop(worker, [])
            marker = bodies.UNRESPONSIVE_PREFIX + worker
            sent = self._safe_send(self.thread, "progress", marker)
            if sent is None:
                return
            if not self._consult_revision(sent):
                self._drop_steps(stuck)
        elif key[0] == "verdict":
            seq = int(key[1])
            step = self._awaiting_verdict.pop(seq, None)
            marker = bodies.UNRESPONSIVE_PREFIX + self.roster.critique
            sent = self._safe_send(self.thread, "progress", marker)
            if sent is None or step is None:
                return
            if not self._consult_revision(sent):
                self._drop_steps([step])
        elif key == ("candidate",) or key == ("submission",):
            self.outcome = "gave_up"
            self._safe_close(self.thread, GAVE_UP_SUMMARY)
            self.done = True
        elif key == ("votes",):
            self._maybe_decide(force=True)
