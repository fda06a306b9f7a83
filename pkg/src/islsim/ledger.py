"""Simulated ledger: ordered transactions, balances, receipts, replay.

There are no blocks, no consensus, and no signatures; the ledger is a
strictly serial state machine. A transaction debits the sender by
``value``, credits the target contract's held balance, and runs one
contract method. If the method raises :class:`Revert`, every contract's
state and all balances are restored from the pre-execution snapshot, so
a reverted transaction is observationally nothing but its receipt.

Determinism matters more than anything else here: token and id
generation derive from the transaction sequence number, account
addresses derive from a creation counter, and the whole history can be
re-executed from the log to reach a bit-identical state.

The persisted log has one entry per line, tab separated. Transaction
lines carry the fields of :class:`Transaction`; ``account`` lines record
account creation (address, starting balance, owner flag) so that a log
alone reconstructs balances during replay.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol

from .errors import CorruptLog, InsufficientFunds, UnknownSender


class Revert(Exception):
    """Raised inside a contract method to abort the transaction.

    The message becomes the receipt's revert_reason and follows the
    ``"<ErrorName>: <detail>"`` convention.
    """


@dataclass(frozen=True)
class Account:
    address: str  # 40 lowercase hex chars
    balance: int  # balance at creation time


@dataclass(frozen=True)
class Transaction:
    seq: int
    sender: str
    contract: str
    method: str
    args: tuple
    value: int


@dataclass(frozen=True)
class AccountCreation:
    address: str
    balance: int
    owner: bool


@dataclass(frozen=True)
class Receipt:
    tx_id: str
    status: str  # "ok" | "reverted"
    revert_reason: str | None
    return_value: object


@dataclass
class CallContext:
    """What a contract method sees of the transaction executing it."""

    sender: str
    seq: int
    value: int
    contract: str
    _ledger: "Ledger"

    def pay_out(self, to: str, amount: int) -> None:
        """Move ``amount`` from this contract's held funds to an account."""
        self._ledger._pay_out(self.contract, to, amount)


class ContractLike(Protocol):
    name: str

    def snapshot(self) -> object: ...
    def restore(self, snap: object) -> None: ...
    def call(self, ctx: CallContext, method: str, args: tuple) -> object: ...
    def state_dict(self) -> dict: ...


def canonical_json(obj: object) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


class Ledger:
    def __init__(self) -> None:
        self._balances: dict[str, int] = {}
        self._contract_balances: dict[str, int] = {}
        self._contracts: dict[str, ContractLike] = {}
        self._account_counter = 0
        self._next_seq = 1
        self.log: list[AccountCreation | Transaction] = []
        self.receipts: dict[int, Receipt] = {}

    # ---------------------------------------------------------------- accounts

    def create_account(self, initial_balance: int, owner: bool = False) -> Account:
        if initial_balance < 0:
            raise ValueError("initial balance must be non-negative")
        self._account_counter += 1
        address = hashlib.sha256(str(self._account_counter).encode()).hexdigest()[:40]
        self._balances[address] = initial_balance
        self.log.append(AccountCreation(address, initial_balance, owner))
        if owner:
            for contract in self._contracts.values():
                hook = getattr(contract, "on_owner_account", None)
                if hook is not None:
                    hook(address)
        return Account(address, initial_balance)

    def balance_of(self, address: str) -> int:
        if address not in self._balances:
            raise UnknownSender(f"no account {address}")
        return self._balances[address]

    def balances(self) -> dict[str, int]:
        return dict(self._balances)

    def contract_balances(self) -> dict[str, int]:
        return dict(self._contract_balances)

    def total_supply(self) -> int:
        return sum(self._balances.values()) + sum(self._contract_balances.values())

    # --------------------------------------------------------------- contracts

    def register_contract(self, contract: ContractLike) -> None:
        if contract.name in self._contracts:
            raise ValueError(f"contract {contract.name!r} already registered")
        self._contracts[contract.name] = contract
        self._contract_balances[contract.name] = 0

    def contract(self, name: str) -> ContractLike:
        return self._contracts[name]

    # --------------------------------------------------------------- execution

    def submit(
        self,
        sender: str,
        contract: str,
        method: str,
        args: Iterable = (),
        value: int = 0,
    ) -> Receipt:
        if sender not in self._balances:
            raise UnknownSender(f"no account {sender}")
        if contract not in self._contracts:
            raise ValueError(f"no contract {contract!r}")
        if value < 0:
            raise ValueError("value must be non-negative")
        if self._balances[sender] < value:
            raise InsufficientFunds(
                f"balance {self._balances[sender]} cannot cover value {value}"
            )

        tx = Transaction(self._next_seq, sender, contract, method, tuple(args), value)
        self._next_seq += 1
        self.log.append(tx)

        snapshots = {name: c.snapshot() for name, c in self._contracts.items()}
        balances_before = dict(self._balances)
        held_before = dict(self._contract_balances)

        self._balances[sender] -= value
        self._contract_balances[contract] += value
        ctx = CallContext(sender, tx.seq, value, contract, self)
        try:
            ret = self._contracts[contract].call(ctx, method, tx.args)
            receipt = Receipt(f"tx-{tx.seq}", "ok", None, ret)
        except Revert as r:
            for name, c in self._contracts.items():
                c.restore(snapshots[name])
            self._balances = balances_before
            self._contract_balances = held_before
            receipt = Receipt(f"tx-{tx.seq}", "reverted", str(r), None)
        self.receipts[tx.seq] = receipt
        return receipt

    def _pay_out(self, contract: str, to: str, amount: int) -> None:
        if amount < 0:
            raise Revert(f"PayoutFailed: negative amount {amount}")
        if to not in self._balances:
            raise Revert(f"PayoutFailed: no account {to}")
        if self._contract_balances[contract] < amount:
            raise Revert(f"PayoutFailed: contract holds {self._contract_balances[contract]}")
        self._contract_balances[contract] -= amount
        self._balances[to] += amount

    # ------------------------------------------------------------------- state

    def state_dict(self) -> dict:
        return {
            "balances": dict(sorted(self._balances.items())),
            "contract_balances": dict(sorted(self._contract_balances.items())),
            "contracts": {name: c.state_dict() for name, c in sorted(self._contracts.items())},
        }

    def canonical_state(self) -> bytes:
        return canonical_json(self.state_dict())


# -------------------------------------------------------------- serialization

def format_log_entry(entry: AccountCreation | Transaction) -> str:
    if isinstance(entry, AccountCreation):
        return (
            f"account\taddress={entry.address}\tbalance={entry.balance}"
            f"\towner={1 if entry.owner else 0}"
        )
    args = json.dumps(list(entry.args), separators=(",", ":"))
    return (
        f"tx\tseq={entry.seq}\tsender={entry.sender}\tcontract={entry.contract}"
        f"\tmethod={entry.method}\tvalue={entry.value}\targs={args}"
    )


def _fields(parts: list[str], expected: tuple[str, ...], line: str) -> list[str]:
    values = []
    if len(parts) != len(expected):
        raise CorruptLog(f"wrong field count in log line: {line!r}")
    for part, key in zip(parts, expected):
        prefix = key + "="
        if not part.startswith(prefix):
            raise CorruptLog(f"expected field {key!r} in log line: {line!r}")
        values.append(part[len(prefix):])
    return values


def parse_log_line(line: str) -> AccountCreation | Transaction:
    parts = line.rstrip("\n").split("\t")
    kind, rest = parts[0], parts[1:]
    try:
        if kind == "account":
            address, balance, owner = _fields(rest, ("address", "balance", "owner"), line)
            if owner not in ("0", "1"):
                raise CorruptLog(f"bad owner flag in log line: {line!r}")
            return AccountCreation(address, int(balance), owner == "1")
        if kind == "tx":
            seq, sender, contract, method, value, args = _fields(
                rest, ("seq", "sender", "contract", "method", "value", "args"), line
            )
            decoded = json.loads(args)
            if not isinstance(decoded, list):
                raise CorruptLog(f"args is not a list in log line: {line!r}")
            return Transaction(int(seq), sender, contract, method, tuple(decoded), int(value))
    except (ValueError, json.JSONDecodeError):
        raise CorruptLog(f"unparseable log line: {line!r}") from None
    raise CorruptLog(f"unknown log entry kind {kind!r}")


def log_lines(ledger: Ledger) -> list[str]:
    return [format_log_entry(e) for e in ledger.log]


def replay(
    entries: Iterable[AccountCreation | Transaction],
    contract_factory: Callable[[], list[ContractLike]],
) -> Ledger:
    """Re-execute a log from genesis and return the resulting ledger.

    The factory must build fresh contract instances wired exactly like
    the live network's. Any entry that cannot be applied exactly as
    logged (sequence gap, address mismatch, rejected transaction) means
    the log does not describe a real history.
    """
    replica = Ledger()
    for contract in contract_factory():
        replica.register_contract(contract)
    expected_seq = 1
    for entry in entries:
        if isinstance(entry, AccountCreation):
            created = replica.create_account(entry.balance, owner=entry.owner)
            if created.address != entry.address:
                raise CorruptLog(
                    f"account line claims {entry.address}, replay produced {created.address}"
                )
            continue
        if entry.seq != expected_seq:
            raise CorruptLog(f"sequence gap: expected {expected_seq}, log has {entry.seq}")
        expected_seq += 1
        try:
            replica.submit(entry.sender, entry.contract, entry.method, entry.args, entry.value)
        except (UnknownSender, InsufficientFunds, ValueError) as exc:
            raise CorruptLog(f"transaction {entry.seq} rejected on replay: {exc}") from None
    return replica
