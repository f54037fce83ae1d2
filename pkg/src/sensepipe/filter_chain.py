"""Ordered keep/drop image filters with profiling and cost-based ordering.

Real classifier models stay out of the artifact. Two plugin kinds cover the
contract instead: a label oracle that reads ground-truth sidecar annotations
(used by tests and simulations), and an external-process plugin speaking
line-delimited JSON over stdin/stdout so real models can be attached later.

The chain optimizer minimizes the expected per-image cost of a permutation,

    E(pi) = sum_i cost[pi_i] * prod_{j<i} (1 - removal[pi_j])

assuming filter independence, which is how the profiles are measured (each
filter applied separately to the same sample).
"""

from __future__ import annotations

import itertools
import json
import select
import subprocess
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .ingest import PostRecord, resolve_image_path

KEEP = "keep"
DROP = "drop"

# Scene labels treated as public; everything else counts as private.
PUBLIC_SCENES = frozenset({
    "street", "square", "supermarket", "shop", "market", "park",
    "hospital", "station", "beach", "stadium", "outdoors", "playground",
})

ROLE_PHOTO = "photo"
ROLE_NSFW = "nsfw"
ROLE_SCENE = "scene"
ROLE_PERSON = "person"
ROLES = (ROLE_PHOTO, ROLE_NSFW, ROLE_SCENE, ROLE_PERSON)

MIN_PEOPLE = 2


class DecisionError(Exception):
    """A plugin failed to produce a usable score for an image."""

    def __init__(self, filter_name: str, reason: str):
        super().__init__(f"{filter_name}: {reason}")
        self.filter_name = filter_name
        self.reason = reason


class ContractError(Exception):
    pass


@dataclass(frozen=True)
class FilterDecision:
    filter_name: str
    verdict: str  # KEEP or DROP
    score: float  # confidence the image is relevant, in [0, 1]
    elapsed: float  # wall-clock seconds


@dataclass(frozen=True)
class FilterProfile:
    filter_name: str
    removal_rate: float
    mean_cost: float
    sample_size: int


@dataclass(frozen=True)
class FilterEval:
    filter_name: str
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    tn: int


class FilterPlugin:
    """Base for filters: produce a relevance score in [0, 1] per image.
    Verdict is keep iff score >= threshold."""

    name: str
    threshold: float = 0.5

    def score(self, image_path: Optional[Path], record: PostRecord) -> float:
        raise NotImplementedError

    def close(self) -> None:  # pragma: no cover - default no-op
        pass


class LabelOracleFilter(FilterPlugin):
    """Scores straight from ground-truth sidecar labels, keyed by post id.

    Roles mirror the four canonical filters: photo-vs-nonphoto, NSFW-vs-safe,
    public-vs-private scene, and person count (keep iff at least two people).
    """

    def __init__(self, name: str, role: str, labels: Mapping[str, Mapping],
                 threshold: float = 0.5):
        if role not in ROLES:
            raise ContractError(f"unknown filter role {role!r}")
        self.name = name
        self.role = role
        self.labels = labels
        self.threshold = threshold

    def score(self, image_path: Optional[Path], record: PostRecord) -> float:
        label = self.labels.get(record.post_id)
        if label is None:
            raise DecisionError(self.name, f"no ground-truth label for {record.post_id}")
        if self.role == ROLE_PHOTO:
            keep = bool(label.get("is_photo"))
        elif self.role == ROLE_NSFW:
            keep = not bool(label.get("nsfw"))
        elif self.role == ROLE_SCENE:
            keep = label.get("scene") in PUBLIC_SCENES
        else:
            keep = int(label.get("people", 0)) >= MIN_PEOPLE
        return 1.0 if keep else 0.0


class ExternalProcessFilter(FilterPlugin):
    """Child-process plugin speaking one JSON object per line.

    Request:  {"image_path": str, "filter_name": str}
    Response: {"score": float}

    The child stays alive across calls. A crash, timeout, or malformed
    response raises DecisionError and the child is restarted on next use.
    """

    def __init__(self, name: str, command: Sequence[str], threshold: float = 0.5,
                 timeout: float = 10.0):
        self.name = name
        self.command = list(command)
        self.threshold = threshold
        self.timeout = timeout
        self._proc: Optional[subprocess.Popen] = None

    def _ensure_proc(self) -> subprocess.Popen:
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(
                self.command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        return self._proc

    def score(self, image_path: Optional[Path], record: PostRecord) -> float:
        request = json.dumps({"image_path": str(image_path or ""), "filter_name": self.name})
        proc = self._ensure_proc()
        try:
            assert proc.stdin is not None and proc.stdout is not None
            proc.stdin.write(request + "\n")
            proc.stdin.flush()
            ready, _, _ = select.select([proc.stdout], [], [], self.timeout)
            if not ready:
                self.close()
                raise DecisionError(self.name, f"plugin timeout after {self.timeout}s")
            line = proc.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            self.close()
            raise DecisionError(self.name, f"plugin pipe failure: {exc}") from exc
        if not line:
            self.close()
            raise DecisionError(self.name, "plugin exited without a response")
        try:
            response = json.loads(line)
            score = float(response["score"])
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise DecisionError(self.name, f"bad plugin response {line!r}") from exc
        return score

    def close(self) -> None:
        if self._proc is not None:
            try:
                self._proc.kill()
                self._proc.wait(timeout=5)
            except OSError:
                pass
            self._proc = None


def evaluate(plugin: FilterPlugin, image_path: Optional[Path], record: PostRecord
             ) -> FilterDecision:
    """Run one plugin on one image, measuring wall-clock cost."""
    start = time.perf_counter()
    score = plugin.score(image_path, record)
    elapsed = time.perf_counter() - start
    if not 0.0 <= score <= 1.0:
        raise DecisionError(plugin.name, f"score {score} outside [0, 1]")
    verdict = KEEP if score >= plugin.threshold else DROP
    return FilterDecision(plugin.name, verdict, score, elapsed)


@dataclass
class ChainResult:
    kept: list[PostRecord]
    stage_stats: list[FilterProfile]
    errors: list[tuple[str, str, str]] = field(default_factory=list)  # post_id, filter, reason


def run_chain(
    records: list[PostRecord],
    chain: Sequence[FilterPlugin],
    images_dir: Optional[str | Path] = None,
) -> ChainResult:
    """Send every record through the filters in order, short-circuiting on the
    first drop. Stage stats report removal relative to each stage's own input.
    A plugin error drops the record with a recorded reason (default policy)
    rather than aborting the run."""
    stage_inputs = [0] * len(chain)
    stage_drops = [0] * len(chain)
    stage_cost = [0.0] * len(chain)
    kept: list[PostRecord] = []
    errors: list[tuple[str, str, str]] = []
    for record in records:
        image_path = resolve_image_path(record, images_dir)
        alive = True
        for idx, plugin in enumerate(chain):
            stage_inputs[idx] += 1
            try:
                decision = evaluate(plugin, image_path, record)
            except DecisionError as exc:
                errors.append((record.post_id, plugin.name, exc.reason))
                stage_drops[idx] += 1
                alive = False
                break
            stage_cost[idx] += decision.elapsed
            if decision.verdict == DROP:
                stage_drops[idx] += 1
                alive = False
                break
        if alive:
            kept.append(record)
    stats = [
        FilterProfile(
            filter_name=plugin.name,
            removal_rate=stage_drops[idx] / stage_inputs[idx] if stage_inputs[idx] else 0.0,
            mean_cost=stage_cost[idx] / stage_inputs[idx] if stage_inputs[idx] else 0.0,
            sample_size=stage_inputs[idx],
        )
        for idx, plugin in enumerate(chain)
    ]
    return ChainResult(kept=kept, stage_stats=stats, errors=errors)


def profile_filters(
    sample: list[PostRecord],
    filters: Sequence[FilterPlugin],
    images_dir: Optional[str | Path] = None,
) -> list[FilterProfile]:
    """Measure removal rate and mean cost of each filter applied separately to
    the full sample (no chaining). Records that fail to evaluate are excluded
    from that filter's sample size."""
    if not sample:
        raise ContractError("profiling sample must be non-empty")
    profiles = []
    for plugin in filters:
        drops = 0
        cost = 0.0
        evaluated = 0
        for record in sample:
            image_path = resolve_image_path(record, images_dir)
            try:
                decision = evaluate(plugin, image_path, record)
            except DecisionError:
                continue
            evaluated += 1
            cost += decision.elapsed
            if decision.verdict == DROP:
                drops += 1
        if evaluated == 0:
            raise ContractError(f"filter {plugin.name} evaluated nothing in the sample")
        profiles.append(FilterProfile(
            filter_name=plugin.name,
            removal_rate=drops / evaluated,
            mean_cost=cost / evaluated,
            sample_size=evaluated,
        ))
    return profiles


def expected_chain_cost(order: Sequence[str], profiles: Mapping[str, FilterProfile]) -> float:
    """Expected per-image cost of running filters in the given order, under
    the independence assumption."""
    survival = 1.0
    total = 0.0
    for name in order:
        profile = profiles[name]
        total += survival * profile.mean_cost
        survival *= 1.0 - profile.removal_rate
    return total


_EXHAUSTIVE_LIMIT = 8


def optimize_order(profiles: Sequence[FilterProfile]) -> list[str]:
    """Permutation of filter names minimizing expected per-image cost.

    Up to 8 filters the minimum is found by exhaustive enumeration; beyond
    that the cost/removal ratio sort is used (optimal for independent
    filters). Ties break lexicographically by name.
    """
    if not profiles:
        return []
    by_name = {p.filter_name: p for p in profiles}
    if len(by_name) != len(profiles):
        raise ContractError("duplicate filter names in profiles")
    names = sorted(by_name)
    if len(names) <= _EXHAUSTIVE_LIMIT:
        best = None
        best_cost = None
        for perm in itertools.permutations(names):
            cost = expected_chain_cost(perm, by_name)
            if best_cost is None or cost < best_cost:
                best, best_cost = perm, cost
        assert best is not None
        return list(best)

    def ratio(name: str) -> float:
        p = by_name[name]
        return p.mean_cost / p.removal_rate if p.removal_rate > 0 else float("inf")

    return sorted(names, key=lambda n: (ratio(n), n))


def eval_filter(decisions: Sequence[FilterDecision], truth: Sequence) -> FilterEval:
    """Score keep/drop decisions against relevance ground truth.

    `truth` entries may be booleans or the strings "relevant"/"irrelevant".
    Precision is the fraction of kept images that are relevant; recall is the
    fraction of relevant images kept.
    """
    if len(decisions) != len(truth) or not decisions:
        raise ContractError("decisions and truth must align and be non-empty")
    tp = fp = fn = tn = 0
    for decision, label in zip(decisions, truth):
        if isinstance(label, str):
            if label not in ("relevant", "irrelevant"):
                raise ContractError(f"bad truth label {label!r}")
            relevant = label == "relevant"
        else:
            relevant = bool(label)
        kept = decision.verdict == KEEP
        if kept and relevant:
            tp += 1
        elif kept and not relevant:
            fp += 1
        elif not kept and relevant:
            fn += 1
        else:
            tn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    name = decisions[0].filter_name
    return FilterEval(name, precision, recall, f1, tp, fp, fn, tn)


def load_labels(path: str | Path) -> dict[str, dict]:
    """Sidecar ground-truth annotations: JSONL keyed by post_id."""
    labels = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            labels[obj["post_id"]] = obj
    return labels


def load_chain(
    config: str | Path | list[dict],
    labels: Optional[Mapping[str, Mapping]] = None,
) -> list[FilterPlugin]:
    """Build plugins from a chain config: an ordered JSON list of
    {name, kind, threshold, params}. Oracle entries need `labels` (or a
    params.labels_path to load them from)."""
    if isinstance(config, (str, Path)):
        with open(config, encoding="utf-8") as fh:
            entries = json.load(fh)
    else:
        entries = config
    if not isinstance(entries, list):
        raise ContractError("chain config must be a JSON list")
    plugins: list[FilterPlugin] = []
    for entry in entries:
        name = entry["name"]
        kind = entry.get("kind", "oracle")
        threshold = float(entry.get("threshold", 0.5))
        params = entry.get("params", {})
        if kind == "oracle":
            entry_labels = labels
            if entry_labels is None and "labels_path" in params:
                entry_labels = load_labels(params["labels_path"])
            if entry_labels is None:
                raise ContractError(f"oracle filter {name} needs ground-truth labels")
            plugins.append(LabelOracleFilter(name, params["role"], entry_labels, threshold))
        elif kind == "process":
            plugins.append(ExternalProcessFilter(
                name, params["command"], threshold, float(params.get("timeout", 10.0))
            ))
        else:
            raise ContractError(f"unknown plugin kind {kind!r}")
    return plugins
