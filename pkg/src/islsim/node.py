"""Network wiring and the participant node facade.

A :class:`Network` owns the simulated ledger, the two governance
contracts, and a directory tree with one subdirectory per node. Each
:class:`IslNode` keeps its assets (dataset and model files) in a private
content-addressed blob store, describes them in a private knowledge
graph, and interacts with other nodes only through ledger transactions
plus direct blob transfer. On-chain state never holds asset bytes or
metadata beyond content addresses and provenance edges; everything else
travels through the describe/serve calls below, which stand in for the
off-chain request channel between nodes.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from . import kgstore, mlsim
from .cas import BlobStore, content_address, is_address
from .contracts import IslContract, OracleContract
from .depgraph import DependencyGraph
from .errors import (
    AlreadyShared,
    IncompleteChain,
    IntegrityFailure,
    IslError,
    NotFound,
    TokenRejected,
    UnknownResource,
    from_reason,
)
from .kgstore import DatasetDescriptor, KnowledgeGraph, ModelRecord
from .ledger import Ledger, Receipt

IRI_PREFIX = "isl://"


@dataclass(frozen=True)
class RankedModel:
    """One row of a marketplace query result."""

    address: str
    task: str
    input_features: tuple[str, ...]
    mse: float
    mae: float
    owner_node: str
    price: int


@dataclass(frozen=True)
class ChainStep:
    """One link of an on-chain provenance chain, root first."""

    model_addr: str
    model_iri: str
    dataset_addr: str
    dataset_iri: str
    tx_id: str
    owner: str


def walk_provenance(oracle: OracleContract, addr: str) -> list[ChainStep]:
    """Reconstruct a shared model's full ancestry from contract state alone."""
    if oracle.model_entry(addr) is None:
        raise UnknownResource(f"{addr} is not a shared model")
    lineage = []
    seen = set()
    cur: str | None = addr
    while cur is not None:
        if cur in seen:
            raise IslError(f"provenance cycle through {cur}")
        seen.add(cur)
        entry = oracle.model_entry(cur)
        if entry is None:
            raise IncompleteChain(f"base model {cur} is not shared")
        lineage.append((cur, entry))
        cur = entry["base_model_addr"]
    lineage.reverse()
    steps = []
    for model_addr, entry in lineage:
        ds = oracle.dataset_entry(entry["dataset_addr"])
        if ds is None:
            raise IncompleteChain(f"training dataset {entry['dataset_addr']} is not shared")
        steps.append(
            ChainStep(
                model_addr=model_addr,
                model_iri=entry["iri"],
                dataset_addr=entry["dataset_addr"],
                dataset_iri=ds["iri"],
                tx_id=entry["tx_id"],
                owner=entry["owner"],
            )
        )
    return steps


def _iri_node(iri: str) -> str:
    if not iri.startswith(IRI_PREFIX):
        raise NotFound(f"{iri!r} is not a resource IRI")
    return iri[len(IRI_PREFIX):].split("/", 1)[0]


def _addr_of(local_uri: str) -> str:
    addr = local_uri.rsplit("/", 1)[-1]
    if not is_address(addr):
        raise NotFound(f"local uri {local_uri!r} does not name a stored blob")
    return addr


class Network:
    """A complete simulated deployment rooted at one directory."""

    def __init__(self, root: Path, ledger: Ledger, owner_account: str) -> None:
        self.root = Path(root)
        self.ledger = ledger
        self.owner_account = owner_account
        self._nodes: dict[str, IslNode] = {}

    @classmethod
    def create(cls, root: str | Path, owner_balance: int) -> "Network":
        ledger = Ledger()
        oracle = OracleContract()
        ledger.register_contract(oracle)
        ledger.register_contract(IslContract(oracle))
        owner = ledger.create_account(owner_balance, owner=True)
        net = cls(Path(root), ledger, owner.address)
        net.root.mkdir(parents=True, exist_ok=True)
        (net.root / "nodes").mkdir(exist_ok=True)
        return net

    @staticmethod
    def contract_factory() -> list:
        """Fresh contract instances for replaying a transaction log."""
        oracle = OracleContract()
        return [oracle, IslContract(oracle)]

    @property
    def oracle(self) -> OracleContract:
        return self.ledger.contract("oracle")  # type: ignore[return-value]

    @property
    def isl(self) -> IslContract:
        return self.ledger.contract("isl")  # type: ignore[return-value]

    # ------------------------------------------------------------------ nodes

    def add_node(self, name: str, balance: int) -> "IslNode":
        if name in self._nodes:
            raise IslError(f"node {name!r} already exists")
        if not name or not all(c.isalnum() or c in "-_" for c in name):
            raise IslError(f"node name {name!r} must be alphanumeric with - or _")
        account = self.ledger.create_account(balance)
        node_dir = self.root / "nodes" / name
        node_dir.mkdir(parents=True, exist_ok=True)
        node = IslNode(self, name, account.address, node_dir)
        self._nodes[name] = node
        return node

    def register_node(self, name: str) -> Receipt:
        node = self.node(name)
        return self.submit(self.owner_account, "oracle", "register_node", (node.account,))

    def node(self, name: str) -> "IslNode":
        try:
            return self._nodes[name]
        except KeyError:
            raise NotFound(f"no node named {name!r}") from None

    def node_names(self) -> list[str]:
        return sorted(self._nodes)

    def node_name_of(self, account: str) -> str | None:
        for name, node in self._nodes.items():
            if node.account == account:
                return name
        return None

    # ------------------------------------------------------------------ chain

    def submit(
        self,
        sender: str,
        contract: str,
        method: str,
        args: tuple = (),
        value: int = 0,
    ) -> Receipt:
        """Run one transaction; a revert surfaces as its typed error."""
        receipt = self.ledger.submit(sender, contract, method, args=args, value=value)
        if receipt.status != "ok":
            raise from_reason(receipt.revert_reason or "IslError: reverted")
        return receipt

    # ----------------------------------------------------- off-chain channel

    def describe_model(self, iri: str) -> ModelRecord:
        """Ask the owning node for a model's descriptive metadata."""
        return self.node(_iri_node(iri)).graph.model(iri)

    def describe_dataset(self, iri: str) -> DatasetDescriptor:
        return self.node(_iri_node(iri)).graph.dataset(iri)

    def persist(self) -> None:
        for node in self._nodes.values():
            node.persist()


class IslNode:
    """One participant: an account, a blob store, and a knowledge graph."""

    def __init__(self, network: Network, name: str, account: str, node_dir: Path) -> None:
        self.network = network
        self.name = name
        self.account = account
        self.root = node_dir
        self.store = BlobStore(node_dir)
        self.graph = KnowledgeGraph(name)
        self.depgraph = DependencyGraph()

    def __repr__(self) -> str:
        return f"IslNode({self.name!r}, account={self.account[:8]}...)"

    @property
    def balance(self) -> int:
        return self.network.ledger.balance_of(self.account)

    # ------------------------------------------------------------ local assets

    def create_local_dataset(
        self,
        local_id: str,
        seed: int,
        profile: mlsim.RoomProfile,
        n_rows: int,
    ) -> DatasetDescriptor:
        """Generate a synthetic sensor dataset and record it locally."""
        data = mlsim.make_synthetic_room(seed, profile, n_rows)
        addr = self.store.put(data.to_csv_bytes())
        schema = tuple(
            f"{name}:{kgstore.FEATURE_UNITS[name]}" for name in data.feature_names
        )
        descriptor = DatasetDescriptor(
            iri=kgstore.dataset_iri(self.name, local_id),
            owner_node=self.name,
            feature_schema=schema,
            local_uri=self.store.relative_uri(addr),
        )
        self.graph.register_dataset(descriptor)
        return descriptor

    def load_dataset(self, ref: str) -> mlsim.TabularDataset:
        descriptor = self.graph.dataset(self._dataset_ref(ref))
        data = self.store.get(_addr_of(descriptor.local_uri))
        return mlsim.TabularDataset.from_csv_bytes(data)

    def load_model(self, ref: str) -> mlsim.LinearModel:
        record = self.graph.model(self._model_ref(ref))
        data = self.store.get(_addr_of(record.model_uri))
        return mlsim.LinearModel.from_bytes(data)

    def train_model(self, local_id: str, dataset_ref: str, task: str) -> ModelRecord:
        """Fit a linear model from scratch on a local dataset."""
        ds_iri = self._dataset_ref(dataset_ref)
        data = self.load_dataset(ds_iri)
        model = mlsim.train(data)
        return self._record_model(local_id, model, data, ds_iri, task, base_iri=None)

    def fine_tune_model(
        self,
        local_id: str,
        base_ref: str,
        dataset_ref: str,
        steps: int,
        learning_rate: float,
    ) -> ModelRecord:
        """Adapt a locally available model (own or acquired) to a local dataset."""
        base_iri = self._model_ref(base_ref)
        base_record = self.graph.model(base_iri)
        base = mlsim.LinearModel.from_bytes(self.store.get(_addr_of(base_record.model_uri)))
        ds_iri = self._dataset_ref(dataset_ref)
        data = self.load_dataset(ds_iri)
        tuned = mlsim.fine_tune(base, data, steps, learning_rate)
        return self._record_model(
            local_id, tuned, data, ds_iri, base_record.task, base_iri=base_iri
        )

    def _record_model(
        self,
        local_id: str,
        model: mlsim.LinearModel,
        data: mlsim.TabularDataset,
        ds_iri: str,
        task: str,
        base_iri: str | None,
    ) -> ModelRecord:
        measures = mlsim.evaluate(model, data)  # goodness of fit on the training rows
        addr = self.store.put(model.to_bytes())
        record = ModelRecord(
            iri=kgstore.model_iri(self.name, local_id),
            task=self._task_ref(task),
            dataset=ds_iri,
            model_uri=self.store.relative_uri(addr),
            base_model=base_iri,
            input_features=model.input_features,
            mae=measures["MAE"],
            mse=measures["MSE"],
            owner_node=self.name,
        )
        self.graph.register_model(record)
        self.depgraph.add_model(record.iri, base_iri, ds_iri)
        return record

    # ----------------------------------------------------------------- sharing

    def share_dataset(self, ref: str) -> DatasetDescriptor:
        iri = self._dataset_ref(ref)
        descriptor = self.graph.dataset(iri)
        if descriptor.shared:
            raise AlreadyShared(f"{iri} is already shared")
        if descriptor.owner_node != self.name:
            raise IncompleteChain(f"{iri} belongs to {descriptor.owner_node}")
        return self._share_dataset_tx(iri)

    def share_model(self, ref: str) -> ModelRecord:
        """Publish a model and, first, any of its own unshared ancestry.

        The whole dependency chain is checked before the first
        transaction: an ancestor owned by another node that is not yet
        on chain aborts the operation with no on-chain effect at all.
        """
        iri = self._model_ref(ref)
        record = self.graph.model(iri)
        if record.shared:
            raise AlreadyShared(f"{iri} is already shared")
        plan = self._share_plan(iri)
        for kind, step_iri in plan:
            if kind == "dataset":
                self._share_dataset_tx(step_iri)
            else:
                self._share_model_tx(step_iri)
        return self.graph.model(iri)

    def _share_plan(self, target_iri: str) -> list[tuple[str, str]]:
        chain = self.depgraph.trace(target_iri)
        oracle = self.network.oracle
        plan: list[tuple[str, str]] = []
        queued: set[str] = set()
        for model_iri, ds_iri in chain.steps:
            for kind, step_iri in (("dataset", ds_iri), ("model", model_iri)):
                if step_iri in queued:
                    continue
                if kind == "dataset":
                    local = (
                        self.graph.dataset(step_iri)
                        if self.graph.has_dataset(step_iri)
                        else None
                    )
                    on_chain = oracle.find_dataset_by_iri(step_iri) is not None
                else:
                    local = (
                        self.graph.model(step_iri)
                        if self.graph.has_model(step_iri)
                        else None
                    )
                    on_chain = oracle.find_model_by_iri(step_iri) is not None
                if on_chain or (local is not None and local.shared):
                    continue
                if local is None or local.owner_node != self.name:
                    raise IncompleteChain(
                        f"{kind} {step_iri} in the dependency chain is not shared"
                    )
                plan.append((kind, step_iri))
                queued.add(step_iri)
        return plan

    def _share_dataset_tx(self, iri: str) -> DatasetDescriptor:
        descriptor = self.graph.dataset(iri)
        data = self.store.get(_addr_of(descriptor.local_uri))
        addr = self.store.put(data)  # re-derive the address from the bytes we serve
        existing = self.network.oracle.dataset_entry(addr)
        if existing is not None:
            # identical content already on chain; adopt its registration
            return self.graph.mark_shared(iri, addr, existing["tx_id"])  # type: ignore[return-value]
        receipt = self.network.submit(self.account, "oracle", "share_dataset", (iri, addr))
        return self.graph.mark_shared(iri, addr, str(receipt.return_value))  # type: ignore[return-value]

    def _share_model_tx(self, iri: str) -> ModelRecord:
        record = self.graph.model(iri)
        data = self.store.get(_addr_of(record.model_uri))
        addr = self.store.put(data)
        existing = self.network.oracle.model_entry(addr)
        if existing is not None:
            return self.graph.mark_shared(iri, addr, existing["tx_id"])  # type: ignore[return-value]
        dataset_addr = self._shared_dataset_addr(record.dataset)
        base_addr = None
        if record.base_model is not None:
            base_addr = self._shared_model_addr(record.base_model)
        receipt = self.network.submit(
            self.account,
            "oracle",
            "share_model",
            (iri, addr, record.task, dataset_addr, base_addr),
        )
        return self.graph.mark_shared(iri, addr, str(receipt.return_value))  # type: ignore[return-value]

    def _shared_dataset_addr(self, iri: str) -> str:
        if self.graph.has_dataset(iri):
            descriptor = self.graph.dataset(iri)
            if descriptor.shared:
                return descriptor.content_address  # type: ignore[return-value]
        addr = self.network.oracle.find_dataset_by_iri(iri)
        if addr is None:
            raise IncompleteChain(f"dataset {iri} is not shared")
        return addr

    def _shared_model_addr(self, iri: str) -> str:
        if self.graph.has_model(iri):
            record = self.graph.model(iri)
            if record.shared:
                return record.content_address  # type: ignore[return-value]
        addr = self.network.oracle.find_model_by_iri(iri)
        if addr is None:
            raise IncompleteChain(f"model {iri} is not shared")
        return addr

    # ------------------------------------------------------------- marketplace

    def query_models(self, task: str, sensors: set[str] | frozenset[str]) -> list[RankedModel]:
        """Shared models for a task whose inputs this space can feed.

        Results come back best first: ascending mean squared error, ties
        broken by content address so the order is total.
        """
        task = self._task_ref(task)
        oracle = self.network.oracle
        isl = self.network.isl
        matches = []
        for addr in oracle.query_task(task):
            entry = oracle.model_entry(addr)
            if entry is None:
                continue
            owner_name = self.network.node_name_of(entry["owner"])
            if owner_name is None:
                continue
            record = self.network.describe_model(entry["iri"])
            if not set(record.input_features) <= set(sensors):
                continue
            matches.append(
                RankedModel(
                    address=addr,
                    task=task,
                    input_features=record.input_features,
                    mse=record.mse,
                    mae=record.mae,
                    owner_node=owner_name,
                    price=isl.price_of(addr),
                )
            )
        matches.sort(key=lambda m: (m.mse, m.address))
        return matches

    def set_price(self, ref: str, price: int) -> str:
        addr = self._resolve_shared_address(ref)
        self.network.submit(self.account, "isl", "set_price", (addr, price))
        return addr

    def acquire_model(self, addr: str, payment: int) -> ModelRecord | DatasetDescriptor:
        """Pay for a shared resource, fetch its bytes, verify, and cache it.

        Payment settles on chain first. The transfer that follows is
        verified against the content address before anything is written
        locally, so a corrupt or malicious serve leaves no local trace.
        """
        receipt = self.network.submit(self.account, "isl", "acquire", (addr,), value=payment)
        grant = receipt.return_value
        if not isinstance(grant, dict) or "token" not in grant:
            raise IslError(f"malformed acquisition grant {grant!r}")

        oracle = self.network.oracle
        model_entry = oracle.model_entry(addr)
        entry = model_entry or oracle.dataset_entry(addr)
        if entry is None:
            raise UnknownResource(f"{addr} vanished after acquisition")
        owner_name = self.network.node_name_of(entry["owner"])
        if owner_name is None:
            raise NotFound(f"no node serves account {entry['owner']}")
        owner_node = self.network.node(owner_name)

        data = owner_node.serve_blob(str(grant["resource_location"]), str(grant["token"]), self.account)
        if content_address(data) != addr:
            raise IntegrityFailure(f"served bytes do not hash to {addr}")

        if owner_name == self.name:
            return self.graph.model(entry["iri"]) if model_entry else self.graph.dataset(entry["iri"])

        self.store.put(data)
        if model_entry is None:
            remote_ds = self.network.describe_dataset(entry["iri"])
            cached_ds = dataclasses.replace(
                remote_ds, local_uri=self.store.relative_uri(addr)
            )
            self.graph.cache_remote_dataset(cached_ds)
            return cached_ds

        remote = self.network.describe_model(entry["iri"])
        cached = dataclasses.replace(remote, model_uri=self.store.relative_uri(addr))
        self.graph.cache_remote_model(cached)
        self._import_provenance(addr)
        return cached

    def _import_provenance(self, addr: str) -> None:
        prev: str | None = None
        for step in walk_provenance(self.network.oracle, addr):
            if step.model_iri not in self.depgraph:
                self.depgraph.add_model(step.model_iri, prev, step.dataset_iri)
            prev = step.model_iri

    def provenance(self, addr: str) -> list[ChainStep]:
        return walk_provenance(self.network.oracle, addr)

    def serve_blob(self, addr: str, token: str, caller: str) -> bytes:
        """Hand out stored bytes against a valid acquisition token."""
        if not self.network.isl.validate_token(token, addr, caller):
            raise TokenRejected(f"token not valid for {addr}")
        return self.store.get(addr)

    # --------------------------------------------------------------- reference

    def _dataset_ref(self, ref: str) -> str:
        return ref if ref.startswith(IRI_PREFIX) else kgstore.dataset_iri(self.name, ref)

    def _model_ref(self, ref: str) -> str:
        return ref if ref.startswith(IRI_PREFIX) else kgstore.model_iri(self.name, ref)

    @staticmethod
    def _task_ref(ref: str) -> str:
        return ref if ref.startswith(kgstore.VOCAB) else kgstore.task_iri(ref)

    def _resolve_shared_address(self, ref: str) -> str:
        if is_address(ref):
            return ref
        if self.graph.has_model(self._model_ref(ref)):
            record = self.graph.model(self._model_ref(ref))
            if record.content_address is None:
                raise UnknownResource(f"{record.iri} is not shared")
            return record.content_address
        if self.graph.has_dataset(self._dataset_ref(ref)):
            descriptor = self.graph.dataset(self._dataset_ref(ref))
            if descriptor.content_address is None:
                raise UnknownResource(f"{descriptor.iri} is not shared")
            return descriptor.content_address
        raise NotFound(f"no local resource matches {ref!r}")

    # -------------------------------------------------------------- filesystem

    def persist(self) -> None:
        """Write the node's knowledge graph and account marker to disk."""
        (self.root / "kg.nt").write_bytes(self.graph.export_bytes())
        (self.root / "account.txt").write_text(self.account + "\n", encoding="ascii")
