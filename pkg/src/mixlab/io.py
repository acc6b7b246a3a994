"""JSON on-disk formats for MDPs, kernels and policies.

MDP document::

    {
      "format": "mixlab.mdp", "version": 1,
      "name": "...",                      # optional
      "n_states": S, "n_actions": A, "gamma": g,
      "reward": [r(0,0), r(0,1), ..., r(S-1,A-1)],          # row-major, length S*A
      "kernel": [[P(.|0,0)], [P(.|0,1)], ..., [P(.|S-1,A-1)]], # S*A rows of length S
      "policy": [a_0, ..., a_{S-1}]       # optional
    }

Kernel document (a plain Markov chain)::

    {"format": "mixlab.kernel", "version": 1, "n_states": S, "kernel": [[...], ...]}

Decomposition document::

    {"format": "mixlab.doeblin", "version": 1, "m": m, "p": p, "psi": [...], "residual": [[...]]}
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .mdp import TabularMdp

FORMAT_VERSION = 1


class FormatError(ValueError):
    """Document does not follow the expected schema."""


def _check_header(doc: dict, fmt: str) -> None:
    if not isinstance(doc, dict):
        raise FormatError("document root must be an object")
    if doc.get("format") != fmt:
        raise FormatError(f"expected format {fmt!r}, got {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported version {doc.get('version')!r}")


def mdp_to_dict(mdp: TabularMdp, policy=None) -> dict:
    doc = {
        "format": "mixlab.mdp",
        "version": FORMAT_VERSION,
        "name": mdp.name,
        "n_states": mdp.n_states,
        "n_actions": mdp.n_actions,
        "gamma": mdp.gamma,
        "reward": mdp.reward.ravel().tolist(),
        "kernel": mdp.kernel.reshape(mdp.n_pairs, mdp.n_states).tolist(),
    }
    if policy is not None:
        doc["policy"] = [int(a) for a in policy]
    return doc


def mdp_from_dict(doc: dict) -> tuple[TabularMdp, np.ndarray | None]:
    _check_header(doc, "mixlab.mdp")
    try:
        n_s = int(doc["n_states"])
        n_a = int(doc["n_actions"])
        reward = np.asarray(doc["reward"], dtype=np.float64)
        kernel = np.asarray(doc["kernel"], dtype=np.float64)
        gamma = float(doc["gamma"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"malformed MDP document: {exc}") from exc
    if reward.size != n_s * n_a or kernel.size != n_s * n_a * n_s:
        raise FormatError("reward/kernel sizes do not match n_states and n_actions")
    try:
        mdp = TabularMdp(reward.reshape(n_s, n_a), kernel.reshape(n_s, n_a, n_s), gamma,
                         name=str(doc.get("name", "mdp")))
    except ValueError as exc:
        raise FormatError(f"invalid MDP: {exc}") from exc
    policy = doc.get("policy")
    if policy is not None:
        policy = np.asarray(policy, dtype=np.int64)
    return mdp, policy


def kernel_to_dict(kernel: np.ndarray) -> dict:
    kernel = np.asarray(kernel, dtype=np.float64)
    return {"format": "mixlab.kernel", "version": FORMAT_VERSION,
            "n_states": int(kernel.shape[0]), "kernel": kernel.tolist()}


def kernel_from_dict(doc: dict) -> np.ndarray:
    _check_header(doc, "mixlab.kernel")
    kernel = np.asarray(doc.get("kernel"), dtype=np.float64)
    n = int(doc.get("n_states", -1))
    if kernel.shape != (n, n):
        raise FormatError(f"kernel shape {kernel.shape} does not match n_states={n}")
    from .mixing import check_kernel

    try:
        return check_kernel(kernel)
    except ValueError as exc:
        raise FormatError(f"invalid kernel: {exc}") from exc


def read_json(path: str | Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_json(path: str | Path, doc: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_mdp(path: str | Path) -> tuple[TabularMdp, np.ndarray | None]:
    return mdp_from_dict(read_json(path))


def save_mdp(path: str | Path, mdp: TabularMdp, policy=None) -> None:
    write_json(path, mdp_to_dict(mdp, policy))


def load_chain(path: str | Path) -> tuple[np.ndarray, TabularMdp | None, np.ndarray | None]:
    """Load either a kernel document or an MDP document.

    Returns ``(kernel, mdp, policy)``; for an MDP the kernel is the one induced
    by its stored policy (an optimal policy when none is stored).
    """
    doc = read_json(path)
    fmt = doc.get("format") if isinstance(doc, dict) else None
    if fmt == "mixlab.kernel":
        return kernel_from_dict(doc), None, None
    mdp, policy = mdp_from_dict(doc)
    from .mdp import policy_kernel, solve_exact

    if policy is None:
        policy = solve_exact(mdp)[2]
    return policy_kernel(mdp, policy), mdp, policy
