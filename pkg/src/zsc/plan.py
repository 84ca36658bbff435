"""Physical plan trees and their ``plan_v1`` serialization."""
from __future__ import annotations

from dataclasses import dataclass, field

from .errors import PlanError
from .relcore import IndexDef
from .workload import Aggregate, Join, Predicate

PLAN_FORMAT = "plan_v1"
OP_KINDS = ("SeqScan", "IndexScan", "HashJoin", "Aggregate")


@dataclass(eq=False)
class PlanNode:
    op: str
    children: list["PlanNode"] = field(default_factory=list)
    table: str | None = None
    predicate: Predicate | None = None
    index: IndexDef | None = None
    probe: int | None = None  # position of the probe leaf in predicate.walk()
    join: Join | None = None
    build: int = 0  # which child feeds the hash table
    aggregates: list[Aggregate] = field(default_factory=list)
    est_card: float | None = None
    act_card: int | None = None
    analytic_cost: float | None = None
    op_id: int = -1

    def walk(self):
        """Pre-order traversal."""
        yield self
        for c in self.children:
            yield from c.walk()

    @property
    def tables(self) -> list[str]:
        if self.table is not None:
            return [self.table]
        return sorted(t for c in self.children for t in c.tables)

    @property
    def probe_leaf(self) -> Predicate | None:
        if self.probe is None:
            return None
        return list(self.predicate.walk())[self.probe]

    def residual(self) -> Predicate | None:
        """Filter left to evaluate after an index probe."""
        if self.probe is None:
            return self.predicate
        leaf = self.probe_leaf
        if self.predicate is leaf:
            return None
        rest = [c for c in self.predicate.children if c is not leaf]
        if len(rest) == 1:
            return rest[0]
        return Predicate("AND", children=rest)

    def to_dict(self) -> dict:
        d = {"op": self.op, "op_id": self.op_id, "est_card": self.est_card, "act_card": self.act_card,
             "analytic_cost": self.analytic_cost, "children": [c.to_dict() for c in self.children]}
        if self.table is not None:
            d["table"] = self.table
        if self.predicate is not None:
            d["predicate"] = self.predicate.to_dict(annotations=True)
        if self.index is not None:
            d["index"] = [self.index.table, self.index.column, self.index.unique]
            d["probe"] = self.probe
        if self.join is not None:
            j = self.join
            d["join"] = [j.child_table, j.child_column, j.parent_table, j.parent_column]
            d["build"] = self.build
        if self.aggregates:
            d["aggregates"] = [[a.func, a.table, a.column] for a in self.aggregates]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PlanNode":
        if d["op"] not in OP_KINDS:
            raise PlanError(f"unknown operator {d['op']!r}")
        return cls(
            op=d["op"],
            children=[cls.from_dict(c) for c in d.get("children", [])],
            table=d.get("table"),
            predicate=Predicate.from_dict(d["predicate"]) if d.get("predicate") else None,
            index=IndexDef(*d["index"]) if d.get("index") else None,
            probe=d.get("probe"),
            join=Join(*d["join"]) if d.get("join") else None,
            build=d.get("build", 0),
            aggregates=[Aggregate(*a) for a in d.get("aggregates", [])],
            est_card=d.get("est_card"),
            act_card=d.get("act_card"),
            analytic_cost=d.get("analytic_cost"),
            op_id=d.get("op_id", -1),
        )


@dataclass(eq=False)
class PhysicalPlan:
    root: PlanNode
    qid: int = -1
    hypothetical: bool = False
    hypothetical_indexes: list[IndexDef] = field(default_factory=list)

    def __post_init__(self):
        for i, node in enumerate(self.root.walk()):
            node.op_id = i

    def ops(self) -> list[PlanNode]:
        return list(self.root.walk())

    def to_dict(self) -> dict:
        return {
            "format": PLAN_FORMAT,
            "qid": self.qid,
            "hypothetical": self.hypothetical,
            "hypothetical_indexes": [[d.table, d.column, d.unique] for d in self.hypothetical_indexes],
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PhysicalPlan":
        if d.get("format") != PLAN_FORMAT:
            raise PlanError(f"expected plan format {PLAN_FORMAT}, got {d.get('format')!r}")
        return cls(PlanNode.from_dict(d["root"]), d.get("qid", -1), d.get("hypothetical", False),
                   [IndexDef(*x) for x in d.get("hypothetical_indexes", [])])

    def copy(self) -> "PhysicalPlan":
        return PhysicalPlan.from_dict(self.to_dict())

    def structure(self):
        """Annotation-free shape, for structural comparison of plans."""
        def strip(n: PlanNode):
            return (n.op, n.table, n.index.key() if n.index else None, n.probe,
                    (n.join.child_table, n.join.parent_table) if n.join else None, n.build,
                    tuple(strip(c) for c in n.children))
        return strip(self.root)
