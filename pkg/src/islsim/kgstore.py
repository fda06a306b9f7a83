"""Embedded triple store: one knowledge graph per node.

The graph is a plain set of subject/predicate/object triples and the
triples are the source of truth; dataset, model, and space descriptors
are materialized views rebuilt by scanning the set. Everything a node
knows about its own assets, its spaces, and any remote shared assets it
has cached lives here, so the ``.nt`` export of the graph is a complete
snapshot of the node's metadata.

Identifier discipline: all entity identifiers are IRIs under the
``isl://`` scheme, ``isl://<node>/<kind>/<local-id>``. Controlled
vocabulary terms (tasks, feature names, units) live under
``isl://vocab/``.

A note on ordering: feature lists are meaningful in order (they define
the column layout of datasets and the weight layout of models), but a
triple set is unordered. Ordered lists are therefore stored as a single
comma-joined literal instead of one triple per element.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import (
    AlreadyShared,
    DuplicateId,
    MalformedDescriptor,
    MalformedTriple,
    NotFound,
    ParseError,
    UnresolvedDependency,
)

VOCAB = "isl://vocab/"

# predicates
P_TYPE = VOCAB + "type"
P_OWNER = VOCAB + "ownerNode"
P_FEATURE_SCHEMA = VOCAB + "featureSchema"
P_LOCAL_URI = VOCAB + "localUri"
P_CONTENT_ADDRESS = VOCAB + "contentAddress"
P_TX_ID = VOCAB + "txId"
P_TASK = VOCAB + "task"
P_TRAINED_ON = VOCAB + "trainedOn"
P_BASE_MODEL = VOCAB + "baseModel"
P_INPUT_FEATURES = VOCAB + "inputFeatures"
P_MAE = VOCAB + "mae"
P_MSE = VOCAB + "mse"
P_SENSOR = VOCAB + "sensor"
P_NODE = VOCAB + "node"

# entity types
T_DATASET = VOCAB + "Dataset"
T_MODEL = VOCAB + "Model"
T_SPACE = VOCAB + "Space"

DECIMAL_TYPE = VOCAB + "decimal"

TASKS = ("occupancy_detection", "energy_prediction")
FEATURE_UNITS = {
    "co2": "ppm",
    "temperature": "celsius",
    "humidity": "percent",
    "power": "watt",
}


def task_iri(name: str) -> str:
    return f"{VOCAB}task/{name}"


TASK_IRIS = tuple(task_iri(t) for t in TASKS)


def dataset_iri(node_id: str, local_id: str) -> str:
    return f"isl://{node_id}/dataset/{local_id}"


def model_iri(node_id: str, local_id: str) -> str:
    return f"isl://{node_id}/model/{local_id}"


def space_iri(node_id: str, local_id: str) -> str:
    return f"isl://{node_id}/space/{local_id}"


@dataclass(frozen=True)
class Literal:
    """Typed literal object. datatype is 'string' or 'decimal'."""

    lexical: str
    datatype: str = "string"

    def as_float(self) -> float:
        return float(self.lexical)


def decimal(value: float) -> Literal:
    return Literal(repr(float(value)), "decimal")


@dataclass(frozen=True)
class Triple:
    subject: str
    predicate: str
    obj: str | Literal


@dataclass(frozen=True)
class DatasetDescriptor:
    iri: str
    owner_node: str
    feature_schema: tuple[str, ...]  # entries "name:unit"
    local_uri: str
    content_address: str | None = None
    tx_id: str | None = None

    @property
    def shared(self) -> bool:
        return self.content_address is not None and self.tx_id is not None

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(entry.split(":", 1)[0] for entry in self.feature_schema)


@dataclass(frozen=True)
class ModelRecord:
    iri: str
    task: str
    dataset: str
    model_uri: str
    base_model: str | None
    input_features: tuple[str, ...]
    mae: float
    mse: float
    owner_node: str
    content_address: str | None = None
    tx_id: str | None = None

    @property
    def shared(self) -> bool:
        return self.content_address is not None and self.tx_id is not None

    @property
    def eval_measures(self) -> dict[str, float]:
        return {"MAE": self.mae, "MSE": self.mse}


@dataclass(frozen=True)
class SpaceProfile:
    iri: str
    node: str
    available_sensors: frozenset[str] = field(default_factory=frozenset)


def _is_iri(value: object) -> bool:
    return isinstance(value, str) and value.startswith("isl://") and len(value) > 6


class KnowledgeGraph:
    def __init__(self, node_id: str):
        self.node_id = node_id
        self.triples: set[Triple] = set()

    # ---------------------------------------------------------------- triples

    def assert_triples(self, triples: Iterable[Triple]) -> int:
        """Insert triples, returning how many were new (set semantics)."""
        batch = list(triples)
        for t in batch:
            self._check_triple(t)
        added = 0
        for t in batch:
            if t not in self.triples:
                self.triples.add(t)
                added += 1
        return added

    @staticmethod
    def _check_triple(t: Triple) -> None:
        if not isinstance(t, Triple):
            raise MalformedTriple(f"not a triple: {t!r}")
        if not _is_iri(t.subject):
            raise MalformedTriple(f"subject is not an isl:// IRI: {t.subject!r}")
        if not _is_iri(t.predicate):
            raise MalformedTriple(f"predicate is not an isl:// IRI: {t.predicate!r}")
        if isinstance(t.obj, Literal):
            if t.obj.datatype not in ("string", "decimal"):
                raise MalformedTriple(f"unknown literal type {t.obj.datatype!r}")
            if any(ch in t.obj.lexical for ch in "\n\r\t"):
                raise MalformedTriple("literal contains control characters")
            if t.obj.datatype == "decimal":
                try:
                    float(t.obj.lexical)
                except ValueError:
                    raise MalformedTriple(
                        f"bad decimal literal {t.obj.lexical!r}"
                    ) from None
        elif not _is_iri(t.obj):
            raise MalformedTriple(f"object is neither IRI nor literal: {t.obj!r}")

    def _props(self, subject: str) -> dict[str, list[str | Literal]]:
        out: dict[str, list[str | Literal]] = {}
        for t in self.triples:
            if t.subject == subject:
                out.setdefault(t.predicate, []).append(t.obj)
        return out

    def _subjects_of_type(self, type_iri: str) -> list[str]:
        return sorted(
            t.subject for t in self.triples if t.predicate == P_TYPE and t.obj == type_iri
        )

    # ------------------------------------------------------------ registration

    def register_dataset(self, d: DatasetDescriptor) -> str:
        self._check_fresh(d.iri)
        self._check_unshared_for_registration(d)
        if d.owner_node != self.node_id:
            raise MalformedDescriptor(
                f"dataset {d.iri} is owned by {d.owner_node!r}; "
                f"use cache_remote_dataset for foreign assets"
            )
        self._check_feature_schema(d.feature_schema)
        self.assert_triples(self._dataset_triples(d))
        return d.iri

    def register_model(self, m: ModelRecord) -> str:
        self._check_fresh(m.iri)
        self._check_unshared_for_registration(m)
        if m.owner_node != self.node_id:
            raise MalformedDescriptor(
                f"model {m.iri} is owned by {m.owner_node!r}; "
                f"use cache_remote_model for foreign assets"
            )
        self._check_model_fields(m)
        if not self.has_dataset(m.dataset):
            raise UnresolvedDependency(f"dataset {m.dataset} is not known to this graph")
        if m.base_model is not None and not self.has_model(m.base_model):
            raise UnresolvedDependency(
                f"base model {m.base_model} is not known to this graph"
            )
        self.assert_triples(self._model_triples(m))
        return m.iri

    def register_space(self, s: SpaceProfile) -> str:
        self._check_fresh(s.iri)
        unknown = set(s.available_sensors) - set(FEATURE_UNITS)
        if unknown:
            raise MalformedDescriptor(f"unknown sensors {sorted(unknown)}")
        triples = [
            Triple(s.iri, P_TYPE, T_SPACE),
            Triple(s.iri, P_NODE, Literal(s.node)),
        ]
        triples += [Triple(s.iri, P_SENSOR, Literal(name)) for name in sorted(s.available_sensors)]
        self.assert_triples(triples)
        return s.iri

    def cache_remote_dataset(self, d: DatasetDescriptor) -> str:
        """Cache a shared dataset owned by another node, keeping its own IRI."""
        if not d.shared:
            raise MalformedDescriptor(f"remote dataset {d.iri} must be shared")
        if d.owner_node == self.node_id:
            raise MalformedDescriptor(f"{d.iri} is local; register it instead")
        existing = self._maybe_dataset(d.iri)
        if existing is not None:
            if existing != d:
                raise DuplicateId(f"{d.iri} already cached with different metadata")
            return d.iri
        self._check_fresh(d.iri)
        self._check_feature_schema(d.feature_schema)
        self.assert_triples(self._dataset_triples(d))
        return d.iri

    def cache_remote_model(self, m: ModelRecord) -> str:
        """Cache a shared model owned by another node.

        Dependency references are not resolved here: the owner's graph
        validated them at registration, and an acquirer may know the
        model without knowing its ancestors' metadata.
        """
        if not m.shared:
            raise MalformedDescriptor(f"remote model {m.iri} must be shared")
        if m.owner_node == self.node_id:
            raise MalformedDescriptor(f"{m.iri} is local; register it instead")
        existing = self._maybe_model(m.iri)
        if existing is not None:
            if existing != m:
                raise DuplicateId(f"{m.iri} already cached with different metadata")
            return m.iri
        self._check_fresh(m.iri)
        self._check_model_fields(m)
        self.assert_triples(self._model_triples(m))
        return m.iri

    def _check_fresh(self, iri: str) -> None:
        if not _is_iri(iri):
            raise MalformedDescriptor(f"identifier is not an isl:// IRI: {iri!r}")
        if any(t.subject == iri for t in self.triples):
            raise DuplicateId(f"{iri} is already registered")

    @staticmethod
    def _check_unshared_for_registration(res: DatasetDescriptor | ModelRecord) -> None:
        if res.content_address is not None or res.tx_id is not None:
            if not res.shared:
                raise MalformedDescriptor(
                    f"{res.iri}: content_address and tx_id must be set together"
                )
            raise MalformedDescriptor(
                f"{res.iri}: registration requires an unshared descriptor; "
                f"sharing happens through the node workflow"
            )

    @staticmethod
    def _check_feature_schema(schema: tuple[str, ...]) -> None:
        if not schema:
            raise MalformedDescriptor("feature schema is empty")
        for entry in schema:
            name, sep, unit = entry.partition(":")
            if not sep or name not in FEATURE_UNITS or unit != FEATURE_UNITS[name]:
                raise MalformedDescriptor(f"bad feature schema entry {entry!r}")

    @staticmethod
    def _check_model_fields(m: ModelRecord) -> None:
        if m.task not in TASK_IRIS:
            raise MalformedDescriptor(f"unknown task {m.task!r}")
        if not m.input_features:
            raise MalformedDescriptor("model has no input features")
        unknown = set(m.input_features) - set(FEATURE_UNITS)
        if unknown:
            raise MalformedDescriptor(f"unknown input features {sorted(unknown)}")
        for key, value in (("MAE", m.mae), ("MSE", m.mse)):
            if not (isinstance(value, (int, float)) and value >= 0):
                raise MalformedDescriptor(f"{key} must be a non-negative number")

    def _dataset_triples(self, d: DatasetDescriptor) -> list[Triple]:
        triples = [
            Triple(d.iri, P_TYPE, T_DATASET),
            Triple(d.iri, P_OWNER, Literal(d.owner_node)),
            Triple(d.iri, P_FEATURE_SCHEMA, Literal(",".join(d.feature_schema))),
            Triple(d.iri, P_LOCAL_URI, Literal(d.local_uri)),
        ]
        if d.shared:
            triples.append(Triple(d.iri, P_CONTENT_ADDRESS, Literal(d.content_address)))
            triples.append(Triple(d.iri, P_TX_ID, Literal(d.tx_id)))
        return triples

    def _model_triples(self, m: ModelRecord) -> list[Triple]:
        triples = [
            Triple(m.iri, P_TYPE, T_MODEL),
            Triple(m.iri, P_OWNER, Literal(m.owner_node)),
            Triple(m.iri, P_TASK, m.task),
            Triple(m.iri, P_TRAINED_ON, m.dataset),
            Triple(m.iri, P_LOCAL_URI, Literal(m.model_uri)),
            Triple(m.iri, P_INPUT_FEATURES, Literal(",".join(m.input_features))),
            Triple(m.iri, P_MAE, decimal(m.mae)),
            Triple(m.iri, P_MSE, decimal(m.mse)),
        ]
        if m.base_model is not None:
            triples.append(Triple(m.iri, P_BASE_MODEL, m.base_model))
        if m.shared:
            triples.append(Triple(m.iri, P_CONTENT_ADDRESS, Literal(m.content_address)))
            triples.append(Triple(m.iri, P_TX_ID, Literal(m.tx_id)))
        return triples

    # ----------------------------------------------------------------- sharing

    def mark_shared(self, iri: str, addr: str, tx_id: str) -> DatasetDescriptor | ModelRecord:
        existing: DatasetDescriptor | ModelRecord | None = self._maybe_dataset(iri)
        if existing is None:
            existing = self._maybe_model(iri)
        if existing is None:
            raise NotFound(f"no resource {iri} in this graph")
        if existing.shared:
            raise AlreadyShared(f"{iri} was already shared as {existing.content_address}")
        self.assert_triples(
            [
                Triple(iri, P_CONTENT_ADDRESS, Literal(addr)),
                Triple(iri, P_TX_ID, Literal(tx_id)),
            ]
        )
        refreshed = self._maybe_dataset(iri) or self._maybe_model(iri)
        assert refreshed is not None
        return refreshed

    # ----------------------------------------------------------------- queries

    def datasets(self) -> list[DatasetDescriptor]:
        return [self._materialize_dataset(s) for s in self._subjects_of_type(T_DATASET)]

    def models(self) -> list[ModelRecord]:
        return [self._materialize_model(s) for s in self._subjects_of_type(T_MODEL)]

    def spaces(self) -> list[SpaceProfile]:
        return [self._materialize_space(s) for s in self._subjects_of_type(T_SPACE)]

    def dataset(self, iri: str) -> DatasetDescriptor:
        d = self._maybe_dataset(iri)
        if d is None:
            raise NotFound(f"no dataset {iri} in this graph")
        return d

    def model(self, iri: str) -> ModelRecord:
        m = self._maybe_model(iri)
        if m is None:
            raise NotFound(f"no model {iri} in this graph")
        return m

    def has_dataset(self, iri: str) -> bool:
        return self._maybe_dataset(iri) is not None

    def has_model(self, iri: str) -> bool:
        return self._maybe_model(iri) is not None

    def query_models_by_task(self, task: str) -> list[ModelRecord]:
        return [m for m in self.models() if m.task == task]

    def dataset_by_address(self, addr: str) -> DatasetDescriptor | None:
        for d in self.datasets():
            if d.content_address == addr:
                return d
        return None

    def model_by_address(self, addr: str) -> ModelRecord | None:
        for m in self.models():
            if m.content_address == addr:
                return m
        return None

    def _maybe_dataset(self, iri: str) -> DatasetDescriptor | None:
        props = self._props(iri)
        if T_DATASET not in props.get(P_TYPE, []):
            return None
        return self._materialize_dataset(iri, props)

    def _maybe_model(self, iri: str) -> ModelRecord | None:
        props = self._props(iri)
        if T_MODEL not in props.get(P_TYPE, []):
            return None
        return self._materialize_model(iri, props)

    def _materialize_dataset(
        self, iri: str, props: dict[str, list[str | Literal]] | None = None
    ) -> DatasetDescriptor:
        props = props if props is not None else self._props(iri)
        schema = self._one_literal(iri, props, P_FEATURE_SCHEMA)
        return DatasetDescriptor(
            iri=iri,
            owner_node=self._one_literal(iri, props, P_OWNER),
            feature_schema=tuple(schema.split(",")) if schema else (),
            local_uri=self._one_literal(iri, props, P_LOCAL_URI),
            content_address=self._opt_literal(iri, props, P_CONTENT_ADDRESS),
            tx_id=self._opt_literal(iri, props, P_TX_ID),
        )

    def _materialize_model(
        self, iri: str, props: dict[str, list[str | Literal]] | None = None
    ) -> ModelRecord:
        props = props if props is not None else self._props(iri)
        features = self._one_literal(iri, props, P_INPUT_FEATURES)
        return ModelRecord(
            iri=iri,
            task=self._one_iri(iri, props, P_TASK),
            dataset=self._one_iri(iri, props, P_TRAINED_ON),
            model_uri=self._one_literal(iri, props, P_LOCAL_URI),
            base_model=self._opt_iri(iri, props, P_BASE_MODEL),
            input_features=tuple(features.split(",")) if features else (),
            mae=float(self._one_literal(iri, props, P_MAE)),
            mse=float(self._one_literal(iri, props, P_MSE)),
            owner_node=self._one_literal(iri, props, P_OWNER),
            content_address=self._opt_literal(iri, props, P_CONTENT_ADDRESS),
            tx_id=self._opt_literal(iri, props, P_TX_ID),
        )

    def _materialize_space(self, iri: str) -> SpaceProfile:
        props = self._props(iri)
        sensors = frozenset(
            o.lexical for o in props.get(P_SENSOR, []) if isinstance(o, Literal)
        )
        return SpaceProfile(iri=iri, node=self._one_literal(iri, props, P_NODE), available_sensors=sensors)

    @staticmethod
    def _one_literal(iri: str, props: dict[str, list[str | Literal]], pred: str) -> str:
        objs = [o for o in props.get(pred, []) if isinstance(o, Literal)]
        if len(objs) != 1:
            raise MalformedDescriptor(f"{iri}: expected exactly one {pred}, found {len(objs)}")
        return objs[0].lexical

    @staticmethod
    def _opt_literal(iri: str, props: dict[str, list[str | Literal]], pred: str) -> str | None:
        objs = [o for o in props.get(pred, []) if isinstance(o, Literal)]
        if len(objs) > 1:
            raise MalformedDescriptor(f"{iri}: multiple values for {pred}")
        return objs[0].lexical if objs else None

    @staticmethod
    def _one_iri(iri: str, props: dict[str, list[str | Literal]], pred: str) -> str:
        objs = [o for o in props.get(pred, []) if isinstance(o, str)]
        if len(objs) != 1:
            raise MalformedDescriptor(f"{iri}: expected exactly one {pred}, found {len(objs)}")
        return objs[0]

    @staticmethod
    def _opt_iri(iri: str, props: dict[str, list[str | Literal]], pred: str) -> str | None:
        objs = [o for o in props.get(pred, []) if isinstance(o, str)]
        if len(objs) > 1:
            raise MalformedDescriptor(f"{iri}: multiple values for {pred}")
        return objs[0] if objs else None

    # ------------------------------------------------------------ serialization

    def export_bytes(self) -> bytes:
        lines = sorted(format_triple(t) for t in self.triples)
        return ("".join(line + "\n" for line in lines)).encode("utf-8")

    @classmethod
    def import_bytes(cls, node_id: str, data: bytes) -> "KnowledgeGraph":
        graph = cls(node_id)
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"graph document is not UTF-8: {exc}") from None
        triples = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            try:
                triples.append(parse_triple(line))
            except ParseError as exc:
                raise ParseError(f"line {lineno}: {exc}") from None
        try:
            graph.assert_triples(triples)
        except MalformedTriple as exc:
            raise ParseError(str(exc)) from None
        return graph


def _escape(lexical: str) -> str:
    return lexical.replace("\\", "\\\\").replace('"', '\\"')


def _unescape(lexical: str) -> str:
    out = []
    i = 0
    while i < len(lexical):
        ch = lexical[i]
        if ch == "\\":
            if i + 1 >= len(lexical) or lexical[i + 1] not in '\\"':
                raise ParseError(f"bad escape in literal: {lexical!r}")
            out.append(lexical[i + 1])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def format_triple(t: Triple) -> str:
    if isinstance(t.obj, Literal):
        body = f'"{_escape(t.obj.lexical)}"'
        if t.obj.datatype == "decimal":
            body += f"^^<{DECIMAL_TYPE}>"
    else:
        body = f"<{t.obj}>"
    return f"<{t.subject}> <{t.predicate}> {body} ."


def parse_triple(line: str) -> Triple:
    rest = line
    subject, rest = _take_iri(rest)
    predicate, rest = _take_iri(rest)
    rest = rest.lstrip()
    obj: str | Literal
    if rest.startswith("<"):
        obj, rest = _take_iri(rest)
    elif rest.startswith('"'):
        obj, rest = _take_literal(rest)
    else:
        raise ParseError(f"expected IRI or literal object near {rest!r}")
    if rest.strip() != ".":
        raise ParseError(f"missing terminating '.' in {line!r}")
    return Triple(subject, predicate, obj)


def _take_iri(text: str) -> tuple[str, str]:
    text = text.lstrip()
    if not text.startswith("<"):
        raise ParseError(f"expected '<' near {text!r}")
    end = text.find(">")
    if end < 0:
        raise ParseError(f"unterminated IRI in {text!r}")
    return text[1:end], text[end + 1 :]


def _take_literal(text: str) -> tuple[Literal, str]:
    # text starts with '"'
    i = 1
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == '"':
            break
        i += 1
    else:
        raise ParseError(f"unterminated literal in {text!r}")
    lexical = _unescape(text[1:i])
    rest = text[i + 1 :]
    datatype = "string"
    if rest.startswith("^^"):
        type_iri, rest = _take_iri(rest[2:])
        if type_iri != DECIMAL_TYPE:
            raise ParseError(f"unsupported literal datatype {type_iri!r}")
        datatype = "decimal"
    return Literal(lexical, datatype), rest
