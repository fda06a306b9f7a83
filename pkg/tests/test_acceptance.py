"""Top-level acceptance checks, one test per criterion.

Each test ends by calling :func:`acceptance_report.record`, which both
asserts the verdict and feeds the per-criterion summary printed after
the run. Criteria are property-based: randomized inputs with fixed
seeds, zero tolerated violations unless a threshold is stated inline.
"""
from __future__ import annotations

import random
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

import pytest

import oracles
from acceptance_report import record
from islsim import cli, kgstore
from islsim.cas import content_address
from islsim.contracts import OracleContract
from islsim.errors import InsufficientFunds, IntegrityFailure
from islsim.ledger import Ledger, replay
from islsim.mlsim import (
    RoomProfile,
    TabularDataset,
    evaluate,
    fine_tune,
    make_synthetic_room,
    mse_gradient,
    train,
)
from islsim.node import Network, walk_provenance

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"
TASK = kgstore.task_iri("occupancy_detection")
PROFILE = RoomProfile(slope=2.0, intercept=1.0, noise_scale=0.05)


def fresh_chain(n_nodes: int) -> tuple[Ledger, str, list[str]]:
    """A bare ledger with both contracts, an owner, and registered nodes."""
    ledger = Ledger()
    for contract in Network.contract_factory():
        ledger.register_contract(contract)
    owner = ledger.create_account(1_000_000, owner=True)
    nodes = []
    for _ in range(n_nodes):
        account = ledger.create_account(1_000)
        ledger.submit(owner.address, "oracle", "register_node", (account.address,))
        nodes.append(account.address)
    return ledger, owner.address, nodes


# ----------------------------------------------------- criteria 1 and 3 input

@dataclass
class ClosureRun:
    oracle: OracleContract
    structure: dict[str, tuple[str | None, str]]  # model -> (base | None, dataset)
    accepted: list[str]  # model addrs that made it on chain, in share order
    decisions: list[tuple[bool, bool]]  # (predicted accept, actual accept)
    closure_ok: bool


@pytest.fixture(scope="module")
def closure_runs() -> list[ClosureRun]:
    """1000 random dependency DAGs pushed through the live share rules.

    Every model share is predicted from first principles before it is
    submitted: accept iff the training dataset is on chain and the base
    model, if any, was accepted earlier.
    """
    rng = random.Random(0xC1)
    runs = []
    for trial in range(1_000):
        ledger, _, nodes = fresh_chain(rng.randint(1, 3))
        model_addrs = [content_address(f"{trial}:m{i}".encode()) for i in range(rng.randint(1, 20))]
        datasets = [content_address(f"{trial}:d{i}".encode()) for i in range(rng.randint(1, 8))]

        structure: dict[str, tuple[str | None, str]] = {}
        for i, addr in enumerate(model_addrs):
            base = rng.choice(model_addrs[:i]) if i and rng.random() < 0.6 else None
            structure[addr] = (base, rng.choice(datasets))

        shared_datasets = {d for d in datasets if rng.random() < 0.7}
        for i, ds in enumerate(sorted(shared_datasets)):
            receipt = ledger.submit(
                rng.choice(nodes), "oracle", "share_dataset", (f"isl://x/dataset/t{trial}d{i}", ds)
            )
            assert receipt.status == "ok"

        order = model_addrs[:]
        rng.shuffle(order)
        accepted: list[str] = []
        decisions = []
        for i, addr in enumerate(order):
            base, ds = structure[addr]
            predicted = ds in shared_datasets and (base is None or base in accepted)
            receipt = ledger.submit(
                rng.choice(nodes),
                "oracle",
                "share_model",
                (f"isl://x/model/t{trial}m{i}", addr, TASK, ds, base),
            )
            actual = receipt.status == "ok"
            decisions.append((predicted, actual))
            if actual:
                accepted.append(addr)

        oracle = ledger.contract("oracle")
        closure_ok = (
            oracle.check_closure() is None
            and oracles.registry_closure_violation(oracle.state_dict()) is None
        )
        runs.append(ClosureRun(oracle, structure, accepted, decisions, closure_ok))
    return runs


def test_criterion_01_closure_enforcement(closure_runs):
    attempts = sum(len(r.decisions) for r in closure_runs)
    wrong = sum(p != a for r in closure_runs for p, a in r.decisions)
    bad_closure = sum(not r.closure_ok for r in closure_runs)
    record(
        1,
        wrong == 0 and bad_closure == 0,
        f"{len(closure_runs)} random DAGs, {attempts} share decisions, "
        f"{wrong} mispredicted, {bad_closure} closure violations",
    )


def test_criterion_02_share_once():
    rng = random.Random(0xC2)
    violations = 0
    attempts = 0
    for trial in range(200):
        ledger, _, nodes = fresh_chain(3)
        ds_addrs = [content_address(f"c2:{trial}:d{i}".encode()) for i in range(4)]

        schedule = [
            (node, "share_dataset", (f"isl://x/dataset/{i}", addr))
            for i, addr in enumerate(ds_addrs)
            for node in nodes
        ]
        rng.shuffle(schedule)
        winners: dict[str, list[str]] = defaultdict(list)
        first_attempt: dict[str, str] = {}
        for sender, method, args in schedule:
            addr = args[1]
            first_attempt.setdefault(addr, sender)
            receipt = ledger.submit(sender, "oracle", method, args)
            attempts += 1
            if receipt.status == "ok":
                winners[addr].append(sender)
            elif not receipt.revert_reason.startswith("AlreadyShared"):
                violations += 1

        for addr in ds_addrs:
            if winners[addr] != [first_attempt[addr]]:
                violations += 1
            entry = ledger.contract("oracle").dataset_entry(addr)
            if entry is None or entry["owner"] != first_attempt[addr]:
                violations += 1

        # same race on a model address, twice per node
        m_addr = content_address(f"c2:{trial}:m".encode())
        args_m = ("isl://x/model/m", m_addr, TASK, ds_addrs[0], None)
        race = [(n, args_m) for n in nodes for _ in range(2)]
        rng.shuffle(race)
        ok = 0
        for sender, args in race:
            receipt = ledger.submit(sender, "oracle", "share_model", args)
            attempts += 1
            if receipt.status == "ok":
                ok += 1
            elif not receipt.revert_reason.startswith("AlreadyShared"):
                violations += 1
        if ok != 1:
            violations += 1
    record(
        2,
        violations == 0,
        f"200 interleavings, {attempts} share attempts, {violations} violations",
    )


def _expected_chain(structure, addr):
    lineage = []
    cursor: str | None = addr
    while cursor is not None:
        base, ds = structure[cursor]
        lineage.append((cursor, ds))
        cursor = base
    lineage.reverse()
    return lineage


def test_criterion_03_provenance_equivalence(closure_runs, tmp_path):
    # on-chain walk vs the generating structure, for every accepted model
    checked = 0
    mismatches = 0
    for run in closure_runs:
        for addr in run.accepted:
            steps = walk_provenance(run.oracle, addr)
            got = [(s.model_addr, s.dataset_addr) for s in steps]
            checked += 1
            if got != _expected_chain(run.structure, addr):
                mismatches += 1

    # node-level: off-chain dependency traces vs the on-chain walk
    rng = random.Random(0xC3)
    trace_checks = 0
    for netidx in range(8):
        net = Network.create(tmp_path / f"net{netidx}", owner_balance=1_000)
        for name in ("n0", "n1"):
            net.add_node(name, balance=5_000)
            net.register_node(name)
        creators: dict[str, str] = {}  # model iri -> node name
        shared: list = []  # ModelRecord
        for step in range(rng.randint(2, 5)):
            actor = net.node(rng.choice(("n0", "n1")))
            ds_id = f"d{step}"
            actor.create_local_dataset(ds_id, seed=netidx * 100 + step, profile=PROFILE, n_rows=6)
            if shared and rng.random() < 0.7:
                base = rng.choice(shared)
                if base.owner_node != actor.name and not actor.graph.has_model(base.iri):
                    actor.acquire_model(base.content_address, payment=0)
                model = actor.fine_tune_model(f"m{step}", base.iri, ds_id, steps=3, learning_rate=0.05)
            else:
                model = actor.train_model(f"m{step}", ds_id, "occupancy_detection")
            published = actor.share_model(f"m{step}")
            creators[published.iri] = actor.name
            shared.append(published)
        for published in shared:
            owner = net.node(creators[published.iri])
            expected = list(owner.depgraph.trace(published.iri).steps)
            steps = walk_provenance(net.oracle, published.content_address)
            got = [(s.model_iri, s.dataset_iri) for s in steps]
            trace_checks += 1
            if got != expected:
                mismatches += 1
    record(
        3,
        mismatches == 0,
        f"{checked} on-chain chains + {trace_checks} off-chain traces compared, "
        f"{mismatches} mismatches",
    )


def test_criterion_04_governance(tmp_path):
    net = Network.create(tmp_path / "net", owner_balance=1_000)
    alice = net.add_node("alice", balance=500)
    net.register_node("alice")
    alice.create_local_dataset("d1", seed=4, profile=PROFILE, n_rows=20)
    alice.train_model("m1", "d1", "occupancy_detection")
    published = alice.share_model("m1")
    alice.set_price("m1", 10)

    mallory = net.ledger.create_account(500)  # never registered
    rng = random.Random(0xC4)
    calls = []
    for i in range(40):
        fresh = content_address(f"c4:{i}".encode())
        calls.append(rng.choice([
            ("oracle", "share_dataset", (f"isl://m/dataset/{i}", fresh), 0),
            ("oracle", "share_model", (f"isl://m/model/{i}", fresh, TASK, published.content_address, None), 0),
            ("isl", "acquire", (published.content_address,), 10),
            ("isl", "acquire", (published.content_address,), 0),
            ("isl", "acquire", (fresh,), 0),
        ]))

    refused = 0
    for contract, method, args, value in calls:
        before = net.ledger.canonical_state()
        receipt = net.ledger.submit(mallory.address, contract, method, args, value=value)
        if (
            receipt.status == "reverted"
            and receipt.revert_reason.startswith("Unauthorized")
            and net.ledger.canonical_state() == before
        ):
            refused += 1

    replica = replay(net.ledger.log, Network.contract_factory)
    replay_equal = replica.canonical_state() == net.ledger.canonical_state()
    record(
        4,
        refused == len(calls) and replay_equal,
        f"{refused}/{len(calls)} unauthorized calls reverted with no state delta; "
        f"replay equality {'holds' if replay_equal else 'broken'}",
    )


def test_criterion_05_payment_conservation(tmp_path):
    rng = random.Random(0xC5)
    net = Network.create(tmp_path / "net", owner_balance=1_000)
    names = ("alice", "bob", "carol")
    for name in names:
        net.add_node(name, balance=rng.randint(200, 800))
        net.register_node(name)

    prices = {}
    for i, name in enumerate(names):
        node = net.node(name)
        node.create_local_dataset(f"d{i}", seed=50 + i, profile=PROFILE, n_rows=10)
        node.train_model(f"m{i}", f"d{i}", "occupancy_detection")
        published = node.share_model(f"m{i}")
        price = rng.choice((0, 7, 25))
        if price:
            node.set_price(f"m{i}", price)
        prices[published.content_address] = (price, node.account)

    ledger = net.ledger
    supply = ledger.total_supply()
    addrs = list(prices)
    drift = 0
    transfers_checked = 0
    bad_transfers = 0
    for _ in range(200):
        buyer = net.node(rng.choice(names))
        addr = rng.choice(addrs + [content_address(b"bogus")])
        price, seller = prices.get(addr, (0, None))
        payment = rng.choice((price, price + 1, 0, 999))
        before_buyer = ledger.balance_of(buyer.account)
        before_seller = ledger.balance_of(seller) if seller else 0
        try:
            receipt = ledger.submit(buyer.account, "isl", "acquire", (addr,), value=payment)
        except InsufficientFunds:
            receipt = None
        if ledger.total_supply() != supply:
            drift += 1
        if receipt is not None and receipt.status == "ok":
            transfers_checked += 1
            expect_buyer = before_buyer - price + (price if buyer.account == seller else 0)
            expect_seller = before_seller + price - (price if buyer.account == seller else 0)
            if (
                ledger.balance_of(buyer.account) != expect_buyer
                or ledger.balance_of(seller) != expect_seller
            ):
                bad_transfers += 1
    record(
        5,
        drift == 0 and bad_transfers == 0,
        f"supply constant across 200 mixed acquires ({drift} drifts); "
        f"{transfers_checked} successful transfers moved exactly the posted price "
        f"({bad_transfers} off)",
    )


def test_criterion_06_integrity(tmp_path):
    net = Network.create(tmp_path / "net", owner_balance=1_000)
    alice = net.add_node("alice", balance=100)
    bob = net.add_node("bob", balance=10_000)
    net.register_node("alice")
    net.register_node("bob")
    alice.create_local_dataset("d1", seed=6, profile=PROFILE, n_rows=25)
    alice.train_model("m1", "d1", "occupancy_detection")
    published = alice.share_model("m1")
    alice.set_price("m1", 2)
    addr = published.content_address

    blob_path = alice.store.path_for(addr)
    original = blob_path.read_bytes()
    rng = random.Random(0xC6)
    caught = clean = 0
    for _ in range(100):
        tampered = bytearray(original)
        offset = rng.randrange(len(tampered))
        tampered[offset] ^= rng.randint(1, 255)
        blob_path.write_bytes(bytes(tampered))
        try:
            bob.acquire_model(addr, payment=2)
        except IntegrityFailure:
            caught += 1
        # a failed transfer must never replace an existing good copy
        if bob.store.contains(addr):
            assert content_address(bob.store.get(addr)) == addr

        blob_path.write_bytes(original)
        got = bob.acquire_model(addr, payment=2)
        if content_address(bob.store.get(got.content_address)) == addr:
            clean += 1
    record(
        6,
        caught == 100 and clean == 100,
        f"tampered acquires rejected {caught}/100, clean acquires verified {clean}/100",
    )


def test_criterion_07_ledger_determinism(tmp_path, capsys):
    expected_exit = {
        "two_node_share_acquire.isl": 0,
        "transfer_learning.isl": 0,
        "unauthorized_share.isl": 1,
    }
    problems = []
    for name, expected in expected_exit.items():
        scenario = SCENARIOS / name
        first, second = tmp_path / f"{name}-a", tmp_path / f"{name}-b"
        codes = {
            cli.main(["run", str(scenario), "--workspace", str(first)]),
            cli.main(["run", str(scenario), "--workspace", str(second)]),
        }
        if codes != {expected}:
            problems.append(f"{name}: exit codes {codes}")
            continue

        files_a = {p.relative_to(first): p.read_bytes() for p in first.rglob("*") if p.is_file()}
        files_b = {p.relative_to(second): p.read_bytes() for p in second.rglob("*") if p.is_file()}
        if files_a != files_b:
            problems.append(f"{name}: runs differ")
        if cli.main(["replay", str(first)]) != 0:
            problems.append(f"{name}: replay mismatch")
    capsys.readouterr()
    record(
        7,
        not problems,
        "3 scenarios ran twice byte-identically and replayed to MATCH"
        if not problems
        else "; ".join(problems),
    )


def _random_regression(rng: random.Random) -> TabularDataset:
    features = tuple(f"f{i}" for i in range(rng.randint(1, 4)))
    coefs = [rng.uniform(-3, 3) for _ in features]
    intercept = rng.uniform(-2, 2)
    rows = []
    for _ in range(rng.randint(len(features) + 2, 40)):
        x = tuple(rng.uniform(-2, 2) for _ in features)
        y = sum(c * v for c, v in zip(coefs, x)) + intercept + rng.gauss(0, 0.1)
        rows.append((x, y))
    return TabularDataset(features, tuple(rows))


def test_criterion_08_ml_numerics():
    rng = random.Random(0xC8)
    worst_coef = worst_metric = worst_grad = 0.0
    for _ in range(200):
        data = _random_regression(rng)
        model = train(data)
        ref_w, ref_b = oracles.lstsq_fit(data.rows)
        worst_coef = max(
            worst_coef,
            abs(model.bias - ref_b),
            max(abs(a - b) for a, b in zip(model.weights, ref_w)),
        )

        measured = evaluate(model, data)
        ref = oracles.np_metrics(model.weights, model.bias, data.rows)
        worst_metric = max(
            worst_metric,
            abs(measured["MAE"] - ref["MAE"]),
            abs(measured["MSE"] - ref["MSE"]),
        )

        probe = fine_tune(model, data, steps=rng.randint(0, 3), learning_rate=0.01)
        grad_w, grad_b = mse_gradient(probe, data)
        fd_w, fd_b = oracles.fd_gradient(probe.weights, probe.bias, data.rows)
        for a, f in zip(tuple(grad_w) + (grad_b,), tuple(fd_w) + (fd_b,)):
            worst_grad = max(worst_grad, abs(a - f) / max(abs(a), abs(f), 1.0))

    record(
        8,
        worst_coef <= 1e-9 and worst_metric <= 1e-12 and worst_grad <= 1e-6,
        f"200 cases: coef err {worst_coef:.2e} (<=1e-9), "
        f"metric err {worst_metric:.2e} (<=1e-12), grad rel err {worst_grad:.2e} (<=1e-6)",
    )


def test_criterion_09_transfer_learning(tmp_path, capsys):
    wins = 0
    for seed in range(1, 101):
        source = make_synthetic_room(seed * 1000 + 1, RoomProfile(2.0, 1.0, 0.05), 200)
        small = make_synthetic_room(seed * 1000 + 2, RoomProfile(2.0, 1.5, 0.05), 5)
        target = make_synthetic_room(seed * 1000 + 3, RoomProfile(2.0, 1.5, 0.05), 200)
        tuned = fine_tune(train(source), small, steps=50, learning_rate=0.05)
        scratch = train(small)
        wins += evaluate(tuned, target)["MSE"] < evaluate(scratch, target)["MSE"]

    code = cli.main(
        ["run", str(SCENARIOS / "transfer_learning.isl"), "--workspace", str(tmp_path / "ws")]
    )
    capsys.readouterr()
    record(
        9,
        wins >= 90 and code == 0,
        f"fine-tuning beat 5-row scratch training on {wins}/100 seeds (>=90); "
        f"CLI flow exit {code}",
    )


def test_criterion_10_query_soundness(tmp_path):
    rng = random.Random(0xC10)
    features_pool = tuple(sorted(kgstore.FEATURE_UNITS))
    queries = violations = 0
    for netidx in range(25):
        net = Network.create(tmp_path / f"net{netidx}", owner_balance=1_000)
        names = ["n0", "n1", "n2"][: rng.randint(2, 3)]
        for name in names:
            net.add_node(name, balance=500)
            net.register_node(name)

        ground = []  # (addr, task iri, features, mse, price, owner)
        for i in range(rng.randint(3, 6)):
            owner = rng.choice(names)
            node = net.node(owner)
            feats = tuple(sorted(rng.sample(features_pool, rng.randint(1, 3))))
            rows = tuple(
                (tuple(rng.uniform(-2.0, 2.0) for _ in feats), rng.uniform(-2.0, 2.0))
                for _ in range(rng.randint(len(feats) + 2, 12))
            )
            data = TabularDataset(feats, rows)
            addr = node.store.put(data.to_csv_bytes())
            node.graph.register_dataset(kgstore.DatasetDescriptor(
                iri=kgstore.dataset_iri(owner, f"d{i}"),
                owner_node=owner,
                feature_schema=tuple(f"{f}:{kgstore.FEATURE_UNITS[f]}" for f in feats),
                local_uri=node.store.relative_uri(addr),
            ))
            task = rng.choice(kgstore.TASKS)
            node.train_model(f"m{i}", f"d{i}", task)
            published = node.share_model(f"m{i}")
            price = rng.randint(1, 50) if rng.random() < 0.5 else 0
            if price:
                node.set_price(f"m{i}", price)
            ground.append(
                (published.content_address, kgstore.task_iri(task), set(feats),
                 published.mse, price, owner)
            )

        for _ in range(20):
            queries += 1
            querier = net.node(rng.choice(names))
            task = kgstore.task_iri(rng.choice(kgstore.TASKS))
            sensors = set(rng.sample(features_pool, rng.randint(0, len(features_pool))))
            got = querier.query_models(task, sensors)
            expected = sorted(
                (
                    (mse, addr, price, owner)
                    for addr, t, feats, mse, price, owner in ground
                    if t == task and feats <= sensors
                ),
            )
            observed = [(m.mse, m.address, m.price, m.owner_node) for m in got]
            if observed != expected:
                violations += 1
            if any(not set(m.input_features) <= sensors or m.task != task for m in got):
                violations += 1
    record(
        10,
        violations == 0,
        f"{queries} randomized queries against ground truth, {violations} violations",
    )
