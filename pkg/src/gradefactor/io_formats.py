"""On-disk formats: response CSV, model/truth JSON, mask JSON, DOT graphs,
and run manifests.

The response CSV has a header row of learner ids, question ids in the
first column, 0/1 entries, and empty strings for unobserved cells.  The
model JSON stores W as (question, concept, value) triplets so the sparse
support is explicit.  Everything is serialized with sorted keys and
repr-exact floats so rerunning a command with the same inputs writes
byte-identical files.
"""

from __future__ import annotations

import csv
import hashlib
import json

import numpy as np

from .bayes import PosteriorSummary
from .links import LinkKind
from .model import FactorModel, ResponseMatrix


def default_question_ids(Q):
    return [f"q{i + 1}" for i in range(Q)]


def default_learner_ids(N):
    return [f"l{j + 1}" for j in range(N)]


def write_response_csv(path, data: ResponseMatrix, question_ids=None,
                       learner_ids=None):
    question_ids = question_ids or default_question_ids(data.Q)
    learner_ids = learner_ids or default_learner_ids(data.N)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["question_id", *learner_ids])
        for i, qid in enumerate(question_ids):
            row = [qid]
            for j in range(data.N):
                if data.mask[i, j]:
                    row.append(str(int(data.entries[i, j])))
                else:
                    row.append("")
            writer.writerow(row)


def read_response_csv(path):
    """Returns (ResponseMatrix, question_ids, learner_ids)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise ValueError(f"{path}: expected a header with at least one learner")
    learner_ids = rows[0][1:]
    question_ids = []
    entries, mask = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(learner_ids) + 1:
            raise ValueError(
                f"{path}:{lineno}: expected {len(learner_ids) + 1} cells, got {len(row)}"
            )
        question_ids.append(row[0])
        ent_row, mask_row = [], []
        for cell in row[1:]:
            cell = cell.strip()
            if cell == "":
                ent_row.append(0.0)
                mask_row.append(False)
            elif cell in ("0", "1"):
                ent_row.append(float(cell))
                mask_row.append(True)
            else:
                raise ValueError(f"{path}:{lineno}: bad response value {cell!r}")
        entries.append(ent_row)
        mask.append(mask_row)
    data = ResponseMatrix(np.asarray(entries), np.asarray(mask, dtype=bool))
    return data, question_ids, learner_ids


def write_mask_json(path, data: ResponseMatrix):
    pairs = [[int(i), int(j)] for i, j in np.argwhere(data.mask)]
    payload = {"n_observed": data.n_observed, "pairs": pairs}
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True)
        fh.write("\n")


def model_to_dict(model: FactorModel, extras=None):
    triplets = [
        [int(i), int(k), float(model.W[i, k])]
        for i, k in np.argwhere(model.W != 0)
    ]
    payload = {
        "Q": model.Q,
        "N": model.N,
        "K": model.K,
        "link": model.link.value,
        "W": triplets,
        "C": [[float(v) for v in row] for row in model.C],
        "mu": [float(v) for v in model.mu],
    }
    if extras:
        payload.update(extras)
    return payload


def write_model_json(path, model: FactorModel, extras=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, extras), fh, sort_keys=True, indent=1)
        fh.write("\n")


def read_model_json(path):
    """Returns (FactorModel, full payload dict)."""
    with open(path) as fh:
        payload = json.load(fh)
    Q, N, K = payload["Q"], payload["N"], payload["K"]
    W = np.zeros((Q, K))
    for i, k, value in payload["W"]:
        W[i, k] = value
    C = np.asarray(payload["C"], dtype=float)
    mu = np.asarray(payload["mu"], dtype=float)
    model = FactorModel(W, C, mu, LinkKind(payload["link"]))
    return model, payload


def posterior_to_dict(summary: PosteriorSummary):
    return {
        "n_samples": summary.n_samples,
        "burn_in": summary.burn_in,
        "w_mean": summary.w_mean.tolist(),
        "w_var": summary.w_var.tolist(),
        "c_mean": summary.c_mean.tolist(),
        "c_var": summary.c_var.tolist(),
        "mu_mean": summary.mu_mean.tolist(),
        "mu_var": summary.mu_var.tolist(),
        "activity": summary.activity.tolist(),
    }


def model_to_dot(model: FactorModel, question_ids=None, concept_labels=None):
    """Bipartite concept/question graph in DOT form.

    C rows are normalized to unit length with the scale folded into the
    W columns first, so edge widths are comparable across concepts.
    Questions stay in the graph even when nothing links to them.
    """
    question_ids = question_ids or default_question_ids(model.Q)
    row_norms = np.linalg.norm(model.C, axis=1)
    scale = np.where(row_norms > 0, row_norms, 1.0)
    W_vis = model.W * scale[None, :]
    w_max = float(W_vis.max()) if W_vis.size and W_vis.max() > 0 else 1.0

    def quote(label):
        # escape double quotes only; callers may embed \n line breaks
        return label.replace('"', '\\"')

    lines = ["graph concept_map {", "  rankdir=LR;"]
    for k in range(model.K):
        label = concept_labels[k] if concept_labels else f"C{k + 1}"
        lines.append(f'  c{k} [shape=circle, label="{quote(label)}"];')
    for i in range(model.Q):
        label = f"{quote(str(question_ids[i]))}\\nmu={model.mu[i]:.2f}"
        lines.append(f'  q{i} [shape=box, label="{label}"];')
    for i, k in np.argwhere(W_vis > 0):
        width = 0.5 + 4.0 * float(W_vis[i, k]) / w_max
        lines.append(f"  q{i} -- c{k} [penwidth={width:.3f}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def file_sha256(path):
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(path, command, options, seed, inputs, outputs, elapsed_s):
    """Run record: command, options, seed, input digests, outputs, timing.

    The manifest documents the run (including wall time, which varies);
    the data artifacts themselves are the deterministic contract.
    """
    payload = {
        "command": command,
        "options": options,
        "seed": seed,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "elapsed_s": elapsed_s,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=1)
        fh.write("\n")
