"""Command line front end: scenario runner, workspace inspector, replayer.

Exit codes: 0 success, 1 workflow failure (an operation was refused or
could not complete), 2 malformed input (bad scenario text or bad
arguments). Errors go to stderr as ``ErrorName: detail``.

A scenario is a text file of whitespace-separated commands, one per
line, ``#`` starting a comment::

    create-network OWNER_BALANCE
    add-node NAME BALANCE
    register-node NAME
    gen-data NAME DSID SEED SLOPE INTERCEPT NOISE ROWS
    train NAME MODELID DSID TASK
    fine-tune NAME MODELID BASEREF DSID STEPS LR
    share NAME RESID
    set-price NAME RESID PRICE
    query NAME TASK SENSOR [SENSOR ...]
    acquire NAME ADDR PRICE
    trace ADDR

Resource references accept a bare local id, ``node/id``, a full
``isl://`` IRI, or (where an address makes sense) a 64-char content
address. The workspace directory is rewritten after every command, so
on failure it holds the state up to and including the failing entry.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import kgstore
from .cas import is_address
from .errors import IslError, NotFound, ParseError, UnknownResource, UnknownWorkspace
from .ledger import Ledger, canonical_json, log_lines, parse_log_line, replay
from .mlsim import RoomProfile
from .node import IslNode, Network

LEDGER_FILE = "ledger.log"
CHAINSTATE_FILE = "chainstate.json"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        ns = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except ParseError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except IslError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="islsim", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute a scenario file into a workspace")
    run.add_argument("scenario", help="path to the scenario file")
    run.add_argument("--workspace", required=True, help="directory to (re)build")
    run.set_defaults(func=_cmd_run)

    inspect = sub.add_parser("inspect", help="read a persisted workspace")
    inspect.add_argument("workspace")
    inspect.add_argument(
        "what", choices=("registry", "balances", "provenance", "graph")
    )
    inspect.add_argument("arg", nargs="?", help="address for provenance, node for graph")
    inspect.set_defaults(func=_cmd_inspect)

    rep = sub.add_parser("replay", help="re-execute a workspace's transaction log")
    rep.add_argument("workspace")
    rep.set_defaults(func=_cmd_replay)
    return parser


# ---------------------------------------------------------------------- run

def _cmd_run(ns: argparse.Namespace) -> int:
    path = Path(ns.scenario)
    if not path.is_file():
        raise ParseError(f"no scenario file {path}")
    commands = _parse_scenario(path.read_text(encoding="utf-8"))
    runner = ScenarioRunner(Path(ns.workspace))
    return runner.run(commands)


def _parse_scenario(text: str) -> list[list[str]]:
    commands = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        commands.append([f"{lineno}"] + line.split())
    return commands


def _int(token: str, what: str) -> int:
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what} must be an integer, got {token!r}") from None


def _float(token: str, what: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise ParseError(f"{what} must be a number, got {token!r}") from None


class ScenarioRunner:
    """Executes parsed scenario commands against one workspace directory."""

    HANDLERS = {
        "create-network": ("_do_create_network", 1, 1),
        "add-node": ("_do_add_node", 2, 2),
        "register-node": ("_do_register_node", 1, 1),
        "gen-data": ("_do_gen_data", 7, 7),
        "train": ("_do_train", 4, 4),
        "fine-tune": ("_do_fine_tune", 6, 6),
        "share": ("_do_share", 2, 2),
        "set-price": ("_do_set_price", 3, 3),
        "query": ("_do_query", 3, None),
        "acquire": ("_do_acquire", 3, 3),
        "trace": ("_do_trace", 1, 1),
    }

    def __init__(self, workspace: Path) -> None:
        self.workspace = workspace
        self.network: Network | None = None

    def run(self, commands: list[list[str]]) -> int:
        self.workspace.mkdir(parents=True, exist_ok=True)
        try:
            for lineno, name, *args in commands:
                self._dispatch(lineno, name, args)
        finally:
            self._persist()
        return 0

    def _dispatch(self, lineno: str, name: str, args: list[str]) -> None:
        entry = self.HANDLERS.get(name)
        if entry is None:
            raise ParseError(f"line {lineno}: unknown command {name!r}")
        handler, lo, hi = entry
        if len(args) < lo or (hi is not None and len(args) > hi):
            raise ParseError(f"line {lineno}: {name} takes {lo} arguments, got {len(args)}")
        if name == "create-network":
            if self.network is not None:
                raise ParseError(f"line {lineno}: create-network given twice")
        elif self.network is None:
            raise ParseError(f"line {lineno}: create-network must come first")
        getattr(self, handler)(*args)

    def _persist(self) -> None:
        net = self.network
        if net is None:
            # an empty scenario still leaves a well-formed genesis workspace
            ledger = Ledger()
            for contract in Network.contract_factory():
                ledger.register_contract(contract)
            payload = {
                "balances": {},
                "contract_balances": dict(sorted(ledger.contract_balances().items())),
                "oracle": ledger.contract("oracle").state_dict(),
                "isl": ledger.contract("isl").state_dict(),
                "meta": {"owner": None, "nodes": {}},
            }
            (self.workspace / LEDGER_FILE).write_text("", encoding="ascii")
            (self.workspace / CHAINSTATE_FILE).write_bytes(canonical_json(payload) + b"\n")
            return
        lines = log_lines(net.ledger)
        text = "\n".join(lines) + ("\n" if lines else "")
        (self.workspace / LEDGER_FILE).write_text(text, encoding="ascii")
        payload = _chainstate_payload(net)
        payload["meta"] = {
            "owner": net.owner_account,
            "nodes": {name: net.node(name).account for name in net.node_names()},
        }
        (self.workspace / CHAINSTATE_FILE).write_bytes(canonical_json(payload) + b"\n")
        net.persist()

    def _net(self) -> Network:
        assert self.network is not None
        return self.network

    def _node(self, name: str) -> IslNode:
        return self._net().node(name)

    # ---------------------------------------------------------------- commands

    def _do_create_network(self, balance: str) -> None:
        self.network = Network.create(self.workspace, _int(balance, "OWNER_BALANCE"))
        net = self.network
        print(f"network owner={net.owner_account} balance={net.ledger.balance_of(net.owner_account)}")

    def _do_add_node(self, name: str, balance: str) -> None:
        node = self._net().add_node(name, _int(balance, "BALANCE"))
        print(f"node {name} account={node.account} balance={node.balance}")

    def _do_register_node(self, name: str) -> None:
        receipt = self._net().register_node(name)
        print(f"registered {name} tx={receipt.tx_id}")

    def _do_gen_data(
        self, name: str, dsid: str, seed: str, slope: str, intercept: str, noise: str, rows: str
    ) -> None:
        profile = RoomProfile(
            _float(slope, "SLOPE"), _float(intercept, "INTERCEPT"), _float(noise, "NOISE")
        )
        descriptor = self._node(name).create_local_dataset(
            dsid, _int(seed, "SEED"), profile, _int(rows, "ROWS")
        )
        print(f"dataset {descriptor.iri} rows={_int(rows, 'ROWS')} uri={descriptor.local_uri}")

    def _do_train(self, name: str, model_id: str, dsid: str, task: str) -> None:
        record = self._node(name).train_model(model_id, dsid, task)
        print(f"model {record.iri} mse={record.mse!r} mae={record.mae!r}")

    def _do_fine_tune(
        self, name: str, model_id: str, base: str, dsid: str, steps: str, lr: str
    ) -> None:
        record = self._node(name).fine_tune_model(
            model_id,
            self._model_ref_sugar(base),
            dsid,
            _int(steps, "STEPS"),
            _float(lr, "LR"),
        )
        print(f"model {record.iri} mse={record.mse!r} mae={record.mae!r}")

    def _do_share(self, name: str, resid: str) -> None:
        node = self._node(name)
        kind, iri = self._classify_resource(node, resid)
        if kind == "model":
            record = node.share_model(iri)
            print(f"shared {record.iri} addr={record.content_address} tx={record.tx_id}")
        else:
            descriptor = node.share_dataset(iri)
            print(f"shared {descriptor.iri} addr={descriptor.content_address} tx={descriptor.tx_id}")

    def _do_set_price(self, name: str, resid: str, price: str) -> None:
        node = self._node(name)
        if is_address(resid):
            ref = resid
        else:
            _, ref = self._classify_resource(node, resid)
        addr = node.set_price(ref, _int(price, "PRICE"))
        print(f"price addr={addr} value={_int(price, 'PRICE')}")

    def _do_query(self, name: str, task: str, *sensors: str) -> None:
        matches = self._node(name).query_models(task, set(sensors))
        for rank, m in enumerate(matches, start=1):
            print(
                f"match rank={rank} addr={m.address} mse={m.mse!r} "
                f"price={m.price} owner={m.owner_node}"
            )

    def _do_acquire(self, name: str, addr: str, price: str) -> None:
        node = self._node(name)
        resolved = self._resolve_address(addr)
        entry = self._net().oracle.model_entry(resolved) or self._net().oracle.dataset_entry(resolved)
        owner = self._net().node_name_of(entry["owner"]) if entry else None
        node.acquire_model(resolved, _int(price, "PRICE"))
        print(f"acquired {resolved} price={_int(price, 'PRICE')} from={owner}")

    def _do_trace(self, addr: str) -> None:
        resolved = self._resolve_address(addr)
        steps = _format_chain(self._net().oracle.state_dict(), resolved)
        for line in steps:
            print(line)

    # -------------------------------------------------------------- references

    @staticmethod
    def _split_ref(ref: str) -> tuple[str | None, str]:
        if ref.startswith(kgstore.VOCAB) or ref.startswith("isl://"):
            return None, ref
        if "/" in ref:
            node, _, local = ref.partition("/")
            return node, local
        return None, ref

    def _model_ref_sugar(self, ref: str) -> str:
        """BASEREF forms: local id, node/id, or full IRI."""
        node, local = self._split_ref(ref)
        if node is None:
            return local  # bare id or IRI; IslNode resolves against itself
        return kgstore.model_iri(node, local)

    def _classify_resource(self, node: IslNode, resid: str) -> tuple[str, str]:
        """Decide whether RESID names a model or a dataset; refuse ambiguity."""
        owner_name, local = self._split_ref(resid)
        if local.startswith("isl://"):
            if "/model/" in local:
                return "model", local
            if "/dataset/" in local:
                return "dataset", local
            raise ParseError(f"{resid!r} is neither a model nor a dataset IRI")
        graph_owner = owner_name or node.name
        try:
            graph = self._net().node(graph_owner).graph
        except NotFound:
            raise ParseError(f"{resid!r} names unknown node {graph_owner!r}") from None
        as_model = kgstore.model_iri(graph_owner, local)
        as_dataset = kgstore.dataset_iri(graph_owner, local)
        is_model = graph.has_model(as_model)
        is_dataset = graph.has_dataset(as_dataset)
        if is_model and is_dataset:
            raise ParseError(f"{resid!r} matches both a model and a dataset; use a full IRI")
        if is_model:
            return "model", as_model
        if is_dataset:
            return "dataset", as_dataset
        raise NotFound(f"{graph_owner} has no resource {local!r}")

    def _resolve_address(self, ref: str) -> str:
        """ADDR forms: 64-char content address, node/id, or full IRI."""
        if is_address(ref):
            return ref
        node, local = self._split_ref(ref)
        oracle = self._net().oracle
        candidates = (
            [local]
            if node is None
            else [kgstore.model_iri(node, local), kgstore.dataset_iri(node, local)]
        )
        for iri in candidates:
            addr = oracle.find_model_by_iri(iri) or oracle.find_dataset_by_iri(iri)
            if addr is not None:
                return addr
        raise UnknownResource(f"{ref!r} does not name a shared resource")


# ----------------------------------------------------------------- inspect

def _chainstate_payload(net: Network) -> dict:
    return {
        "balances": dict(sorted(net.ledger.balances().items())),
        "contract_balances": dict(sorted(net.ledger.contract_balances().items())),
        "oracle": net.oracle.state_dict(),
        "isl": net.isl.state_dict(),
    }


def _load_chainstate(workspace: Path) -> dict:
    path = workspace / CHAINSTATE_FILE
    if not path.is_file():
        raise UnknownWorkspace(f"{workspace} has no {CHAINSTATE_FILE}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise UnknownWorkspace(f"unreadable {CHAINSTATE_FILE}: {exc}") from None


def _format_chain(oracle_state: dict, addr: str) -> list[str]:
    """Render a model's ancestry, root first, from oracle contract state."""
    models = oracle_state["shared_models"]
    datasets = oracle_state["shared_datasets"]
    if addr not in models:
        raise UnknownResource(f"{addr} is not a shared model")
    lineage = []
    cur: str | None = addr
    seen: set[str] = set()
    while cur is not None:
        if cur in seen or cur not in models:
            raise UnknownResource(f"broken chain at {cur}")
        seen.add(cur)
        lineage.append(cur)
        cur = models[cur]["base_model_addr"]
    lineage.reverse()
    lines = []
    for i, model_addr in enumerate(lineage, start=1):
        entry = models[model_addr]
        ds = datasets.get(entry["dataset_addr"], {})
        lines.append(
            f"step {i}: model={entry['iri']} addr={model_addr} "
            f"dataset={ds.get('iri', '?')} tx={entry['tx_id']} owner={entry['owner']}"
        )
    return lines


def _cmd_inspect(ns: argparse.Namespace) -> int:
    workspace = Path(ns.workspace)
    if not workspace.is_dir():
        raise UnknownWorkspace(f"no workspace directory {workspace}")
    if ns.what == "graph":
        if not ns.arg:
            raise ParseError("inspect graph needs a node name")
        kg_path = workspace / "nodes" / ns.arg / "kg.nt"
        if not kg_path.is_file():
            raise UnknownWorkspace(f"no persisted graph for node {ns.arg!r}")
        sys.stdout.write(kg_path.read_text(encoding="utf-8"))
        return 0

    state = _load_chainstate(workspace)
    if ns.what == "balances":
        for addr, bal in sorted(state["balances"].items()):
            print(f"{addr} {bal}")
        for name, bal in sorted(state["contract_balances"].items()):
            print(f"contract:{name} {bal}")
        return 0
    if ns.what == "registry":
        oracle = state["oracle"]
        for addr, e in sorted(oracle["shared_datasets"].items()):
            print(f"dataset {addr} iri={e['iri']} owner={e['owner']} tx={e['tx_id']}")
        for addr, e in sorted(oracle["shared_models"].items()):
            base = e["base_model_addr"] or "NULL"
            print(
                f"model {addr} iri={e['iri']} task={e['task']} "
                f"dataset={e['dataset_addr']} base={base} owner={e['owner']} tx={e['tx_id']}"
            )
        return 0
    if ns.what == "provenance":
        if not ns.arg or not is_address(ns.arg):
            raise ParseError("inspect provenance needs a content address")
        for line in _format_chain(state["oracle"], ns.arg):
            print(line)
        return 0
    raise ParseError(f"unknown inspect target {ns.what!r}")


# ------------------------------------------------------------------ replay

def _cmd_replay(ns: argparse.Namespace) -> int:
    workspace = Path(ns.workspace)
    log_path = workspace / LEDGER_FILE
    if not log_path.is_file():
        raise UnknownWorkspace(f"{workspace} has no {LEDGER_FILE}")
    stored = _load_chainstate(workspace)
    entries = [parse_log_line(line) for line in log_path.read_text(encoding="ascii").split("\n") if line]
    replica = replay(entries, Network.contract_factory)
    rebuilt = {
        "balances": dict(sorted(replica.balances().items())),
        "contract_balances": dict(sorted(replica.contract_balances().items())),
        "oracle": replica.contract("oracle").state_dict(),
        "isl": replica.contract("isl").state_dict(),
    }
    expected = {k: v for k, v in stored.items() if k != "meta"}
    if canonical_json(rebuilt) == canonical_json(expected):
        print("MATCH")
        return 0
    print("MISMATCH")
    return 1


if __name__ == "__main__":
    sys.exit(main())
