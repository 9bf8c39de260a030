"""Synthetic registration populations with planted collusion rings.

Every ring draws one shared value per attribute; each member adopts the
shared value with that attribute's reuse probability, otherwise a value
from a space large enough that accidental collisions are negligible.
Benign background collisions come from planted family groups (2-3 users
on one device). Generation is fully seeded and byte-identical per seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .attributes import AttributeRecord, AttributeSchema, RawRegistrationEvent, UserId, normalize
from .classifier import LabeledEdgeSample
from .features import build_features

DEFAULT_REUSE = {
    "ip": 0.85,
    "device_id": 0.60,
    "bank_hash": 0.45,
    "dob_hash": 0.75,
    "referral_code": 0.35,
}


@dataclass
class PopulationSpec:
    users: int = 10_000
    rings: int = 50
    ring_size_mean: float = 6.0
    ring_size_max: int = 2000
    ring_size_fixed: int | None = None
    reuse: dict = field(default_factory=lambda: dict(DEFAULT_REUSE))
    name_share_prob: float = 0.8
    ua_share_prob: float = 0.5
    family_rate: float = 0.002
    seed: int = 42
    start_ts: int = 1_700_000_000_000
    step_ms: int = 250

    @classmethod
    def from_dict(cls, doc: dict) -> "PopulationSpec":
        reuse = dict(DEFAULT_REUSE)
        reuse.update(doc.get("reuse", {}))
        return cls(
            users=doc.get("users", 10_000),
            rings=doc.get("rings", 50),
            ring_size_mean=doc.get("ring_size_mean", 6.0),
            ring_size_max=doc.get("ring_size_max", 2000),
            ring_size_fixed=doc.get("ring_size_fixed"),
            reuse=reuse,
            name_share_prob=doc.get("name_share_prob", 0.8),
            ua_share_prob=doc.get("ua_share_prob", 0.5),
            family_rate=doc.get("family_rate", 0.002),
            seed=doc.get("seed", 42),
            start_ts=doc.get("start_ts", 1_700_000_000_000),
            step_ms=doc.get("step_ms", 250),
        )

    def validate(self) -> None:
        if self.ring_size_fixed is not None and self.ring_size_fixed < 2:
            raise ValueError("ring sizes must be >= 2")
        for name, p in self.reuse.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"reuse probability for {name} outside [0, 1]: {p}")
        if not (0.0 <= self.family_rate <= 1.0):
            raise ValueError(f"family_rate outside [0, 1]: {self.family_rate}")


@dataclass
class GroundTruth:
    ring_of: dict = field(default_factory=dict)  # user -> ring id, benign users absent
    rings: dict = field(default_factory=dict)  # ring id -> sorted member list
    family_groups: list = field(default_factory=list)  # benign device-sharing groups

    def is_ring_member(self, user: UserId) -> bool:
        return user in self.ring_of

    def true_pairs(self) -> set:
        pairs = set()
        for members in self.rings.values():
            for i, a in enumerate(members):
                for b in members[i + 1 :]:
                    pairs.add((a, b))
        return pairs

    def to_tsv(self) -> str:
        # Every user appears in the events file; the truth file lists ring
        # members and family members explicitly, everyone else is benign.
        out = []
        for user, ring in sorted(self.ring_of.items()):
            out.append(f"{user}\tring:{ring}")
        for i, group in enumerate(self.family_groups):
            for user in group:
                out.append(f"{user}\tfamily:{i}")
        return "\n".join(out) + "\n" if out else ""


_UA_CATALOG = tuple(
    f"agent/{major}.{minor} (platform-{p}; build-{b})"
    for major in (9, 10, 11)
    for minor in (0, 1, 2, 3)
    for p in ("a", "b")
    for b in (100, 200)
)


class _ValueFactory:
    def __init__(self, rng: np.random.Generator):
        self.rng = rng

    def token(self, prefix: str) -> str:
        return f"{prefix}-{self.rng.integers(0, 2**62):016x}"

    def dob(self) -> str:
        return f"dob-{self.rng.integers(0, 29200):05d}"

    def ua(self) -> str:
        return _UA_CATALOG[int(self.rng.integers(0, len(_UA_CATALOG)))]

    def name(self, surname: str | None = None) -> str:
        given = f"given{self.rng.integers(0, 2000):04d}"
        if surname is None:
            surname = f"family{self.rng.integers(0, 2000):04d}"
        return f"{given} {surname}"

    def geo(self) -> float:
        return float(np.round(self.rng.uniform(0, 1_000_000), 1))


@dataclass
class _RingProfile:
    ip: str
    device: str
    bank: str
    dob: str
    referral: str
    surname: str
    ua: str
    geo_center: float


def generate(spec: PopulationSpec) -> tuple[list[RawRegistrationEvent], GroundTruth]:
    """Events in timestamp order plus exported ground truth."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    vf = _ValueFactory(rng)

    if spec.ring_size_fixed is not None:
        sizes = [spec.ring_size_fixed] * spec.rings
    else:
        p = 1.0 / max(spec.ring_size_mean - 1.0, 1.0)
        sizes = [
            int(min(1 + rng.geometric(p), spec.ring_size_max)) for _ in range(spec.rings)
        ]
        sizes = [max(2, s) for s in sizes]
    ring_users = sum(sizes)
    if ring_users > spec.users:
        raise ValueError(
            f"infeasible spec: {ring_users} ring users exceed population {spec.users}"
        )

    profiles = [
        _RingProfile(
            ip=vf.token("ip"),
            device=vf.token("dev"),
            bank=vf.token("bank"),
            dob=vf.dob(),
            referral=vf.token("ref"),
            surname=f"family{rng.integers(0, 2000):04d}",
            ua=vf.ua(),
            geo_center=vf.geo(),
        )
        for _ in range(spec.rings)
    ]

    # Slot assignment: ring members scattered through the benign stream.
    slots: list[int] = []
    for ring_id, size in enumerate(sizes):
        slots.extend([ring_id] * size)
    slots.extend([-1] * (spec.users - ring_users))
    order = rng.permutation(spec.users)
    slots = [slots[i] for i in order]

    # Family groups: pairs/triples drawn uniformly from benign users.
    benign_positions = [i for i, s in enumerate(slots) if s == -1]
    benign_positions = [benign_positions[i] for i in rng.permutation(len(benign_positions))]
    n_family_users = int(len(benign_positions) * spec.family_rate)
    family_groups: list[list[int]] = []
    fpos = 0
    while fpos + 1 < n_family_users:
        size = int(rng.integers(2, 4))  # 2 or 3
        group = benign_positions[fpos : fpos + size]
        if len(group) < 2:
            break
        family_groups.append(group)
        fpos += size

    family_of: dict[int, int] = {}
    family_profiles: list[dict] = []
    for gid, group in enumerate(family_groups):
        family_profiles.append(
            {
                "device": vf.token("dev"),
                "surname": f"family{rng.integers(0, 2000):04d}",
                "ua": vf.ua(),
                "geo_center": vf.geo(),
            }
        )
        for pos in group:
            family_of[pos] = gid

    truth = GroundTruth()
    events: list[RawRegistrationEvent] = []
    for pos in range(spec.users):
        user = pos + 1
        ts = spec.start_ts + pos * spec.step_ms
        ring_id = slots[pos]
        attrs: dict[str, list] = {}

        def adopt(attr: str) -> bool:
            return ring_id >= 0 and rng.random() < spec.reuse.get(attr, 0.0)

        prof = profiles[ring_id] if ring_id >= 0 else None
        fam = family_profiles[family_of[pos]] if pos in family_of else None

        # ip: 1-3 observations; an adopted ring ip is always the latest.
        n_ips = int(rng.integers(1, 4))
        ip_entries = [[vf.token("ip"), ts - 1000 * (n_ips - k)] for k in range(n_ips)]
        if adopt("ip"):
            ip_entries.append([prof.ip, ts])
        attrs["ip"] = ip_entries

        if fam is not None:
            attrs["device_id"] = [fam["device"]]
        elif adopt("device_id"):
            attrs["device_id"] = [prof.device]
        elif rng.random() < 0.97:
            attrs["device_id"] = [vf.token("dev")]

        if adopt("bank_hash"):
            attrs["bank_hash"] = [prof.bank]
        elif rng.random() < 0.55:
            attrs["bank_hash"] = [vf.token("bank")]

        if adopt("dob_hash"):
            attrs["dob_hash"] = [prof.dob]
        elif rng.random() < 0.90:
            attrs["dob_hash"] = [vf.dob()]

        if adopt("referral_code"):
            attrs["referral_code"] = [prof.referral]
        elif rng.random() < 0.15:
            attrs["referral_code"] = [vf.token("ref")]

        if ring_id >= 0 and rng.random() < spec.name_share_prob:
            attrs["name_token_set"] = [vf.name(prof.surname)]
        elif fam is not None:
            attrs["name_token_set"] = [vf.name(fam["surname"])]
        elif rng.random() < 0.99:
            attrs["name_token_set"] = [vf.name()]

        if ring_id >= 0 and rng.random() < spec.ua_share_prob:
            attrs["user_agent"] = [prof.ua]
        elif fam is not None:
            attrs["user_agent"] = [fam["ua"]]
        elif rng.random() < 0.98:
            attrs["user_agent"] = [vf.ua()]

        if ring_id >= 0:
            geo = prof.geo_center + float(rng.normal(0, 5))
        elif fam is not None:
            geo = fam["geo_center"] + float(rng.normal(0, 5))
        else:
            geo = vf.geo()
        if rng.random() < 0.90:
            attrs["geo_cell"] = [f"{geo:.1f}"]

        events.append(RawRegistrationEvent(user_id=user, registered_at=ts, attributes=attrs))
        if ring_id >= 0:
            truth.ring_of[user] = ring_id
            truth.rings.setdefault(ring_id, []).append(user)

    for members in truth.rings.values():
        members.sort()
    truth.family_groups = [sorted(p + 1 for p in group) for group in family_groups]
    return events, truth


def events_to_ndjson(events: list[RawRegistrationEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def records_from_events(
    events: list[RawRegistrationEvent], schema: AttributeSchema
) -> dict[UserId, AttributeRecord]:
    return {e.user_id: normalize(e, schema) for e in events}


def labeled_edge_samples(
    records: dict[UserId, AttributeRecord],
    truth: GroundTruth,
    schema: AttributeSchema,
    seed: int = 0,
    max_positives: int = 2000,
    negative_ratio: float = 3.0,
    hard_negative_fraction: float = 0.3,
) -> list[LabeledEdgeSample]:
    """Bootstrap training/eval data straight from planted ground truth.

    Negatives mix uniform benign pairs with "hard" ones (family pairs,
    pairs sharing exactly one weak attribute by construction) so a
    single weak match never looks like ring evidence.
    """
    rng = np.random.default_rng(seed)
    pos_pairs = sorted(truth.true_pairs())
    if len(pos_pairs) > max_positives:
        idx = rng.choice(len(pos_pairs), size=max_positives, replace=False)
        pos_pairs = [pos_pairs[i] for i in sorted(idx)]
    samples = [
        LabeledEdgeSample(
            fv=build_features(records[a], records[b], schema), label=1, provenance="synthetic"
        )
        for a, b in pos_pairs
        if a in records and b in records
    ]
    n_pos = len(samples)
    wanted = int(n_pos * negative_ratio)

    benign = sorted(u for u in records if not truth.is_ring_member(u))
    hard: list[tuple[int, int]] = []
    for group in truth.family_groups:
        for i, a in enumerate(group):
            for b in group[i + 1 :]:
                hard.append((a, b))
    rng.shuffle(hard)
    n_hard = min(len(hard), int(wanted * hard_negative_fraction))

    seen: set[tuple[int, int]] = set()
    out_negatives: list[tuple[int, int]] = []
    for pair in hard[:n_hard]:
        if pair not in seen:
            seen.add(pair)
            out_negatives.append(pair)
    guard = 0
    while len(out_negatives) < wanted and guard < wanted * 20 and len(benign) >= 2:
        guard += 1
        i, j = rng.integers(0, len(benign), size=2)
        if i == j:
            continue
        a, b = benign[int(i)], benign[int(j)]
        pair = (a, b) if a < b else (b, a)
        if pair in seen:
            continue
        seen.add(pair)
        out_negatives.append(pair)
    for a, b in out_negatives:
        if a in records and b in records:
            samples.append(
                LabeledEdgeSample(
                    fv=build_features(records[a], records[b], schema),
                    label=0,
                    provenance="synthetic",
                )
            )
    return samples


def evaluate(
    assignments: dict[UserId, int],
    actions: dict[int, str],
    truth: GroundTruth,
    purity_threshold: float = 0.9,
) -> dict:
    """Cluster-level precision/recall per flow plus pairwise edge metrics.

    A highlighted cluster is a true positive iff at least
    ``purity_threshold`` of its members belong to one true ring; recall
    counts rings covered by at least one true-positive cluster.
    """
    ring_users_missing = [u for u in truth.ring_of if u not in assignments]
    if ring_users_missing:
        raise ValueError(
            f"id mismatch: ring users missing from assignments, e.g. {ring_users_missing[:5]}"
        )
    members_by_cluster: dict[int, list[UserId]] = {}
    for user, cluster in assignments.items():
        members_by_cluster.setdefault(cluster, []).append(user)
    bad_actions = [c for c in actions if c not in members_by_cluster]
    if bad_actions:
        raise ValueError(f"id mismatch: actions reference unknown clusters {bad_actions[:5]}")

    flows = {"auto": "auto_block", "manual": "queued_manual"}
    per_flow: dict[str, dict] = {}
    covered: dict[str, set[int]] = {"auto": set(), "manual": set()}
    highlighted_clusters: dict[str, list[int]] = {"auto": [], "manual": []}
    for flow, action in flows.items():
        highlighted_clusters[flow] = [c for c, a in actions.items() if a == action]

    for flow, clusters in highlighted_clusters.items():
        tp = 0
        for cluster in clusters:
            members = members_by_cluster.get(cluster, [])
            if not members:
                continue
            ring_counts: dict[int, int] = {}
            for m in members:
                ring = truth.ring_of.get(m)
                if ring is not None:
                    ring_counts[ring] = ring_counts.get(ring, 0) + 1
            if not ring_counts:
                continue
            dominant_ring, count = max(ring_counts.items(), key=lambda kv: (kv[1], -kv[0]))
            if count / len(members) >= purity_threshold:
                tp += 1
                covered[flow].add(dominant_ring)
        n = len(clusters)
        per_flow[flow] = {
            "highlighted": n,
            "true_positives": tp,
            "precision": tp / n if n else None,
            "recall": len(covered[flow]) / len(truth.rings) if truth.rings else None,
        }

    combined_recall = (
        len(covered["auto"] | covered["manual"]) / len(truth.rings) if truth.rings else None
    )

    true_pairs = truth.true_pairs()
    predicted_pairs: set = set()
    for flow, clusters in highlighted_clusters.items():
        for cluster in clusters:
            members = sorted(members_by_cluster.get(cluster, []))
            for i, a in enumerate(members):
                for b in members[i + 1 :]:
                    predicted_pairs.add((a, b))
    pair_tp = len(predicted_pairs & true_pairs)
    pairwise = {
        "predicted": len(predicted_pairs),
        "precision": pair_tp / len(predicted_pairs) if predicted_pairs else None,
        "recall": pair_tp / len(true_pairs) if true_pairs else None,
    }

    return {
        "auto": per_flow["auto"],
        "manual": per_flow["manual"],
        "combined_recall": combined_recall,
        "pairwise": pairwise,
    }


def truth_from_tsv(text: str) -> GroundTruth:
    truth = GroundTruth()
    families: dict[int, list[int]] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        user_s, tag = line.split("\t")
        user = int(user_s)
        kind, _, ident = tag.partition(":")
        if kind == "ring":
            ring = int(ident)
            truth.ring_of[user] = ring
            truth.rings.setdefault(ring, []).append(user)
        elif kind == "family":
            families.setdefault(int(ident), []).append(user)
    for members in truth.rings.values():
        members.sort()
    truth.family_groups = [sorted(g) for _, g in sorted(families.items())]
    return truth
