import numpy as np

from simvec import EmbeddingSet

# filled by the acceptance suite; echoed after the run (via the conftest
# terminal-summary hook) so the criterion checklist is always visible
ACCEPTANCE_LINES = []


def log_criterion(name, ok):
    ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {name}")


def random_embedding_set(rng, n_refs, d_clip, d_rb, dtype=np.float64):
    return EmbeddingSet(
        v=rng.normal(size=d_clip).astype(dtype),
        c_clip=rng.normal(size=d_clip).astype(dtype),
        r_clip=rng.normal(size=(n_refs, d_clip)).astype(dtype),
        c_rb=rng.normal(size=d_rb).astype(dtype),
        r_rb=rng.normal(size=(n_refs, d_rb)).astype(dtype),
    )
