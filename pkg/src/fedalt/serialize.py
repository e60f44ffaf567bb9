"""Plain-text persistence of instances, datasets, models and training traces.

Instance files are line oriented, one ``key values...`` record per line::

    fedalt-instance 1
    family quadratic            # or logistic
    d 3
    m 2
    rho 1                       # quadratic only
    c_X 1                       # logistic only
    feature_dist uniform        # logistic only
    center 0 0 0
    radius 4.5
    weights 0.5 0.5
    optimum 0 <d values>
    optimum 1 <d values>
    client 0 <n>                # optional dataset blocks
    <n lines: d feature values, then the label for logistic>
    client 1 <n>
    ...
    end

Every real is written with 17 significant digits, which reproduces IEEE
doubles exactly on reload.  Model files use the same conventions with the
header ``fedalt-models 1`` and records ``global`` and ``local <i>``.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Optional

import numpy as np

from .exceptions import InputError
from .instance import (ClientDataset, FederatedDataset, LogisticLoss, ProblemInstance, QuadraticLoss)
from .optim import ProjectionDomain

INSTANCE_HEADER = "fedalt-instance 1"
MODELS_HEADER = "fedalt-models 1"


def _fmt(values) -> str:
    return " ".join(format(float(v), ".17g") for v in np.atleast_1d(values))


def dumps_instance(instance: ProblemInstance, data: Optional[FederatedDataset] = None) -> str:
    loss = instance.loss
    lines = [INSTANCE_HEADER, f"family {loss.kind}", f"d {loss.dim}", f"m {instance.m}"]
    if loss.kind == "quadratic":
        lines.append(f"rho {_fmt(loss.rho)}")
    else:
        lines += [f"c_X {_fmt(loss.c_X)}", f"feature_dist {loss.feature_dist}"]
    lines += [f"center {_fmt(loss.domain.center)}", f"radius {_fmt(loss.domain.radius)}",
              f"weights {_fmt(instance.weights)}"]
    lines += [f"optimum {i} {_fmt(w)}" for i, w in enumerate(instance.optima)]
    if data is not None:
        if data.m != instance.m:
            raise InputError("dataset and instance disagree on the number of clients")
        for i, S in enumerate(data.clients):
            lines.append(f"client {i} {S.n}")
            rows = S.x if S.y is None else np.column_stack([S.x, S.y])
            lines += [_fmt(r) for r in rows]
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads_instance(text: str):
    """Inverse of :func:`dumps_instance`; returns ``(instance, dataset_or_None)``."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != INSTANCE_HEADER:
        raise InputError("not a fedalt instance file (bad or unsupported header)")
    head, pos = {}, 1
    optima = {}
    while pos < len(lines) and not lines[pos].startswith(("client", "end")):
        key, _, rest = lines[pos].partition(" ")
        if key == "optimum":
            idx, _, vals = rest.partition(" ")
            optima[int(idx)] = np.array(vals.split(), dtype=float)
        else:
            head[key] = rest.strip()
        pos += 1
    try:
        family, d, m = head["family"], int(head["d"]), int(head["m"])
        domain = ProjectionDomain(np.array(head["center"].split(), dtype=float), float(head["radius"]))
        weights = np.array(head["weights"].split(), dtype=float)
        opt = np.stack([optima[i] for i in range(m)])
    except (KeyError, ValueError) as exc:
        raise InputError(f"malformed instance file: {exc}") from exc
    if family == "quadratic":
        loss = QuadraticLoss.build(float(head["rho"]), domain, opt)
    elif family == "logistic":
        loss = LogisticLoss.build(float(head["c_X"]), domain, head.get("feature_dist", "uniform"))
    else:
        raise InputError(f"unknown family {family!r}")
    if opt.shape != (m, d):
        raise InputError("optima do not match the declared dimensions")
    instance = ProblemInstance(loss, opt, weights)

    clients = []
    while pos < len(lines) and lines[pos].startswith("client"):
        _, idx, n = lines[pos].split()
        n = int(n)
        block = np.array([r.split() for r in lines[pos + 1:pos + 1 + n]], dtype=float).reshape(n, -1)
        if family == "logistic":
            clients.append(ClientDataset(block[:, :d], block[:, d], int(idx)))
        else:
            clients.append(ClientDataset(block, None, int(idx)))
        pos += 1 + n
    if pos >= len(lines) or lines[pos].strip() != "end":
        raise InputError("instance file is truncated")
    data = FederatedDataset(tuple(clients), weights) if clients else None
    return instance, data


def save_instance(path, instance: ProblemInstance, data: Optional[FederatedDataset] = None) -> None:
    Path(path).write_text(dumps_instance(instance, data), encoding="utf-8", newline="\n")


def load_instance(path):
    return loads_instance(Path(path).read_text(encoding="utf-8"))


def dumps_models(local_models, global_model=None) -> str:
    local_models = np.atleast_2d(np.asarray(local_models, dtype=float))
    lines = [MODELS_HEADER, f"d {local_models.shape[1]}", f"m {local_models.shape[0]}",
             "global -" if global_model is None else f"global {_fmt(global_model)}"]
    lines += [f"local {i} {_fmt(w)}" for i, w in enumerate(local_models)]
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads_models(text: str):
    """Returns ``(local_models, global_model_or_None)``."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != MODELS_HEADER:
        raise InputError("not a fedalt models file")
    glob, locs = None, {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "global" and rest.strip() != "-":
            glob = np.array(rest.split(), dtype=float)
        elif key == "local":
            idx, _, vals = rest.partition(" ")
            locs[int(idx)] = np.array(vals.split(), dtype=float)
    return np.stack([locs[i] for i in range(len(locs))]), glob


def trace_to_csv(trace, m: Optional[int] = None) -> str:
    """Training trace as CSV: ``round``, ``global_dist2_oracle``, one
    ``client_dist2_<i>`` column per client (when recorded) and ``wall_ms``."""
    if m is None:
        m = next((len(r.client_dist2) for r in trace if r.client_dist2 is not None), 0)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["round", "global_dist2_oracle"] + [f"client_dist2_{i}" for i in range(m)] + ["wall_ms"])
    for r in trace:
        cd = [""] * m if r.client_dist2 is None else [repr(float(v)) for v in r.client_dist2]
        gd = "" if r.global_dist2 is None else repr(float(r.global_dist2))
        writer.writerow([r.round, gd] + cd + [repr(float(r.wall_ms))])
    return buf.getvalue()
