#!/usr/bin/env python3
"""Builds the golden synthetic fixture and its expected pipeline outputs.

Everything here is computed with numpy/scipy independently of the C++
engine. Run from the repository root:

    python3 tests/golden/make_golden.py

Outputs (checked in):
    tests/golden/fixture/            manifest.json + CPT1 tensors
    tests/golden/expected.json       per-sample selections and metrics
    tests/golden/s000_raw_map.ppm    raw-map render of sample s000
"""

import json
import pathlib
import struct

import numpy as np
from scipy import ndimage

HERE = pathlib.Path(__file__).resolve().parent
FIXTURE = HERE / "fixture"

D_STAR, D, P, H, W, M = 16, 8, 7, 56, 56, 4
LAYERS = (8, 10)
N_SAMPLES = 5
DEFAULTS = dict(layer=10, delta=0.5, alpha=0.5, gamma=0.5)
LN_EPS = 1e-5
STEP = 0.05
SWEEP_DELTAS = [round(0.1 * i, 1) for i in range(1, 10)]

# ---------------------------------------------------------------- CPT1 I/O

DTYPES = {np.float32: 0, np.uint8: 1, np.uint32: 2}


def write_cpt(path, arr):
    arr = np.ascontiguousarray(arr)
    code = DTYPES[arr.dtype.type]
    header = b"CPT1" + bytes([code, arr.ndim]) + b"".join(struct.pack("<I", d) for d in arr.shape)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(header + arr.astype(arr.dtype.newbyteorder("<")).tobytes())


# ---------------------------------------------------------------- oracle math


def layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return g * (x - mu) / np.sqrt(var + LN_EPS) + b


def cos_rows(a, t):
    na = np.linalg.norm(a, axis=-1)
    nt = np.linalg.norm(t)
    out = np.where((na == 0) | (nt == 0), 0.0, (a @ t) / np.where(na == 0, 1, na) / (nt if nt else 1))
    return np.clip(out, -1.0, 1.0)


def raw_map(patches, text, g, b, proj):
    flat = patches.reshape(-1, D_STAR).astype(np.float64)
    projected = layer_norm(-flat, g, b) @ proj
    return cos_rows(projected, text).reshape(P, P)


def minmax(m):
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.zeros_like(m)
    return np.clip((m - lo) / (hi - lo), 0.0, 1.0)


def canonical_labels(binary):
    lab, k = ndimage.label(binary, structure=[[0, 1, 0], [1, 1, 1], [0, 1, 0]])
    remap, nxt = {}, 1
    out = np.zeros_like(lab, dtype=np.uint32)
    for r in range(lab.shape[0]):
        for c in range(lab.shape[1]):
            v = lab[r, c]
            if v and v not in remap:
                remap[v] = nxt
                nxt += 1
            if v:
                out[r, c] = remap[v]
    return out, k


def cluster(raw, delta):
    norm = minmax(raw)
    used = delta
    b = norm > used
    step = 1
    while not b.any():
        nxt = delta - step * STEP
        if nxt < 0:
            break
        used = nxt
        b = norm > used
        step += 1
    labels, k = canonical_labels(b)
    return labels, k, used, norm


def iou_counts(a, b):
    a, b = a.astype(bool), b.astype(bool)
    return int((a & b).sum()), int((a | b).sum())


def iou(a, b):
    i, u = iou_counts(a, b)
    return 1.0 if u == 0 else i / u


def pipeline(sample, params, hp):
    g, b, proj = params
    text = hp["gamma"] * sample["e_sen"].astype(np.float64) + (1 - hp["gamma"]) * sample["e_noun"].astype(np.float64)
    raw = raw_map(sample["patches"][hp["layer"]], text, g, b, proj)
    labels, k, used, norm = cluster(raw, hp["delta"])
    up = np.repeat(np.repeat(labels, H // P, axis=0), W // P, axis=1)
    masks = sample["masks"]
    e_img = sample["e_img"].astype(np.float64)
    s_pos = cos_rows(e_img, text)
    s_neg = cos_rows(e_img, sample["e_neg"].astype(np.float64)) if sample["e_neg"] is not None else None
    overlaps = []
    for m in range(M):
        if k == 0:
            overlaps.append(0.0)
            continue
        i, u = iou_counts(masks[m], up > 0)
        overlaps.append(0.0 if u == 0 else i / u)
    sorted_ids = sorted(range(M), key=lambda m: (-s_pos[m], m))
    clustered_ids = sorted(range(M), key=lambda m: (-overlaps[m], -s_pos[m], m))
    k_used = min(max(1, k), M)
    pool = sorted(sorted_ids[1:], key=lambda m: (-overlaps[m], -s_pos[m], m))
    topk = [sorted_ids[0]] + pool[: k_used - 1]
    guided = sample["spatial_cue"] is not None and s_neg is not None
    finals = [s_pos[m] - hp["alpha"] * s_neg[m] if guided else s_pos[m] for m in range(M)]
    final_id = min(topk, key=lambda m: (-finals[m], m))
    inter, uni = iou_counts(masks[final_id], sample["gt"])
    return dict(
        raw=raw, norm=norm, labels=labels, k=k, used=used, s_pos=s_pos, s_neg=s_neg, overlaps=overlaps,
        finals=finals, sorted_ids=sorted_ids, clustered_ids=clustered_ids, topk=topk, k_used=k_used,
        final_id=final_id, inter=inter, uni=uni,
        iou=1.0 if uni == 0 else inter / uni,
        topk_oracle=max(iou(masks[m], sample["gt"]) for m in topk),
        upper_bound=max(iou(masks[m], sample["gt"]) for m in range(M)),
    )


# ---------------------------------------------------------------- rendering


def bilinear(m, oh, ow):
    def taps(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.maximum(src, 0.0)
        i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = taps(m.shape[0], oh)
    x0, x1, fx = taps(m.shape[1], ow)
    a = m[np.ix_(y0, x0)]
    b = m[np.ix_(y0, x1)]
    c = m[np.ix_(y1, x0)]
    d = m[np.ix_(y1, x1)]
    top = a + (b - a) * fx[None, :]
    bot = c + (d - c) * fx[None, :]
    return top + (bot - top) * fy[:, None]


def jet_bytes(t):
    t = np.clip(np.nan_to_num(t, nan=0.0), 0.0, 1.0)
    chans = [np.clip(1.5 - np.abs(4.0 * t - k), 0.0, 1.0) for k in (3.0, 2.0, 1.0)]
    return np.stack([np.floor(c * 255.0 + 0.5).astype(np.uint8) for c in chans], axis=-1)


def ppm(rgb):
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode() + rgb.tobytes()


# ---------------------------------------------------------------- generation


def bump_map(rng, n_bumps):
    yy, xx = np.mgrid[0:P, 0:P].astype(np.float64)
    s = np.zeros((P, P))
    centers = []
    while len(centers) < n_bumps:
        c = rng.uniform(0.5, P - 1.5, size=2)
        if all(np.hypot(*(c - o)) > 3.5 for o in centers):
            centers.append(c)
    for i, (cy, cx) in enumerate(centers):
        s += (1.0 - 0.55 * i) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * 0.9 ** 2))
    return s, centers


def disk(cy, cx, r):
    yy, xx = np.mgrid[0:H, 0:W]
    return (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(np.uint8)


def rect(y0, x0, y1, x1):
    out = np.zeros((H, W), np.uint8)
    out[y0:y1, x0:x1] = 1
    return out


def make_sample(rng, idx, params):
    g, b, proj = params
    e_sen = rng.normal(size=D)
    e_noun = e_sen + 0.6 * rng.normal(size=D)
    text = 0.5 * e_sen + 0.5 * e_noun
    u = proj @ text
    u = (u - u.mean()) / np.linalg.norm(u - u.mean())
    v = rng.normal(size=D_STAR)
    v -= v.mean()
    v -= (v @ u) * u
    v /= np.linalg.norm(v)
    v = -0.3 * u + v
    patches = {}
    n_bumps = 1 + idx % 2
    s, centers = bump_map(rng, n_bumps)
    for layer in LAYERS:
        mix = s[..., None] if layer == 10 else 0.6 * s[..., None]
        noise = rng.normal(size=(P, P, D_STAR)) * 0.01
        x = mix * u + (1.0 - mix) * v + noise
        patches[layer] = (-x).astype(np.float32)

    scale_px = H / P
    cy, cx = (centers[0] + 0.5) * scale_px
    gt = disk(cy, cx, 9)
    cand = [disk(cy + rng.integers(-2, 3), cx + rng.integers(-2, 3), 9 + rng.integers(-2, 3))]
    if n_bumps > 1:
        oy, ox = (centers[1] + 0.5) * scale_px
        cand.append(disk(oy, ox, 8))
    else:
        cand.append(rect(0, 0, 20, 56))
    cand.append(rect(int(cy) - 4, 0, int(cy) + 4, 56))
    cand.append(disk(rng.integers(8, 48), rng.integers(8, 48), 6))
    order = rng.permutation(M)
    masks = np.stack([cand[o] for o in order]).astype(np.uint8)

    tn = text / np.linalg.norm(text)
    sims = rng.uniform(0.1, 0.6, size=M)
    e_img = []
    for m in range(M):
        ortho = rng.normal(size=D)
        ortho -= (ortho @ tn) * tn
        ortho /= np.linalg.norm(ortho)
        e_img.append(sims[m] * tn + np.sqrt(1 - sims[m] ** 2) * ortho)
    e_img = np.stack(e_img)

    cue = {1: "behind", 3: "left", 4: "right"}.get(idx)
    e_neg = rng.normal(size=D) if idx in (1, 3) else None
    cls = rng.normal(size=(12, D))
    return dict(
        id=f"s{idx:03d}", expression=f"synthetic expression {idx}", n_o=f"object {idx}",
        n_c="" if idx % 2 else f"context {idx}", spatial_cue=cue,
        e_sen=e_sen.astype(np.float32), e_noun=e_noun.astype(np.float32),
        e_neg=None if e_neg is None else e_neg.astype(np.float32),
        patches=patches, masks=masks, e_img=e_img.astype(np.float32), gt=gt.astype(np.uint8),
        cls=cls.astype(np.float32),
    )


def margins_ok(samples, params):
    deltas = set(SWEEP_DELTAS) | {DEFAULTS["delta"] - i * STEP for i in range(11)}
    for s in samples:
        for layer in LAYERS:
            hp = dict(DEFAULTS, layer=layer)
            r = pipeline(s, params, hp)
            # The extremes are exactly 0 and 1 on both sides; only interior values can flip.
            norm = [v for v in r["norm"].ravel() if 0.0 < v < 1.0]
            if min(abs(v - d) for v in norm for d in deltas) < 1e-6:
                return False
            sp = np.sort(r["s_pos"])
            if np.min(np.diff(sp)) < 1e-6:
                return False
            f = np.sort([r["finals"][m] for m in r["topk"]])
            if len(f) > 1 and np.min(np.diff(f)) < 1e-6:
                return False
            ov = np.sort(r["overlaps"])
            gaps = np.diff(ov)
            if np.any((gaps > 0) & (gaps < 1e-6)):
                return False
    return True


def mean_clusters(samples, params, delta):
    return float(np.mean([cluster(
        raw_map(s["patches"][10], 0.5 * s["e_sen"].astype(np.float64) + 0.5 * s["e_noun"].astype(np.float64),
                *params), delta)[1] for s in samples]))


def main():
    for seed in range(1000):
        rng = np.random.default_rng(20251016 + seed)
        g = 1.0 + 0.1 * rng.normal(size=D_STAR)
        b = 0.05 * rng.normal(size=D_STAR)
        proj = rng.normal(size=(D_STAR, D)) / np.sqrt(D_STAR)
        params = (g.astype(np.float32).astype(np.float64), b.astype(np.float32).astype(np.float64),
                  proj.astype(np.float32).astype(np.float64))
        samples = [make_sample(rng, i, params) for i in range(N_SAMPLES)]
        counts = [mean_clusters(samples, params, d) for d in SWEEP_DELTAS]
        monotone = all(a >= c for a, c in zip(counts, counts[1:]))
        finals = {pipeline(s, params, DEFAULTS)["final_id"] for s in samples}
        reranked = any(pipeline(s, params, DEFAULTS)["k_used"] > 1 for s in samples)
        if monotone and counts[0] > counts[-1] and reranked and len(finals) > 1 and margins_ok(samples, params):
            break
    else:
        raise SystemExit("no seed satisfied the fixture constraints")
    print(f"seed offset {seed}; mean clusters per delta {counts}")

    if FIXTURE.exists():
        for f in sorted(FIXTURE.rglob("*"), reverse=True):
            f.unlink() if f.is_file() else f.rmdir()
    write_cpt(FIXTURE / "params/ln_gamma.cpt", g.astype(np.float32))
    write_cpt(FIXTURE / "params/ln_beta.cpt", b.astype(np.float32))
    write_cpt(FIXTURE / "params/proj.cpt", proj.astype(np.float32))

    entries = []
    for s in samples:
        sid = s["id"]
        e = dict(id=sid, expression=s["expression"], n_o=s["n_o"], n_c=s["n_c"], spatial_cue=s["spatial_cue"])
        for key in ("e_sen", "e_noun", "e_img"):
            write_cpt(FIXTURE / f"{sid}/{key}.cpt", s[key])
            e[key] = f"{sid}/{key}.cpt"
        if s["e_neg"] is not None:
            write_cpt(FIXTURE / f"{sid}/e_neg.cpt", s["e_neg"])
            e["e_neg"] = f"{sid}/e_neg.cpt"
        e["patches"] = {}
        for layer in LAYERS:
            write_cpt(FIXTURE / f"{sid}/patches_l{layer}.cpt", s["patches"][layer])
            e["patches"][str(layer)] = f"{sid}/patches_l{layer}.cpt"
        write_cpt(FIXTURE / f"{sid}/masks.cpt", s["masks"])
        write_cpt(FIXTURE / f"{sid}/gt.cpt", s["gt"])
        write_cpt(FIXTURE / f"{sid}/cls_layers.cpt", s["cls"])
        e.update(masks=f"{sid}/masks.cpt", gt=f"{sid}/gt.cpt", cls_layers=f"{sid}/cls_layers.cpt")
        entries.append(e)
    manifest = dict(
        format="copatch-fixture", version=1, model="clip-vit-b-32",
        dims=dict(d=D, d_star=D_STAR, p=P, height=H, width=W),
        defaults=DEFAULTS,
        params=dict(ln_gamma="params/ln_gamma.cpt", ln_beta="params/ln_beta.cpt", ln_eps=LN_EPS,
                    proj="params/proj.cpt"),
        samples=entries,
    )
    (FIXTURE / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    # Expected outputs use the float32 values exactly as stored on disk.
    results = []
    for s in samples:
        r = pipeline(s, params, DEFAULTS)
        results.append(dict(
            sample_id=s["id"], final_id=r["final_id"], sorted_ids=r["sorted_ids"],
            clustered_ids=r["clustered_ids"], topk_ids=r["topk"], k_used=r["k_used"], clusters=int(r["k"]),
            delta_used=r["used"], labels=r["labels"].astype(int).tolist(),
            raw_map=r["raw"].tolist(), s_pos=list(map(float, r["s_pos"])),
            s_neg=None if r["s_neg"] is None else list(map(float, r["s_neg"])),
            overlap=list(map(float, r["overlaps"])), final=list(map(float, r["finals"])),
            intersection=r["inter"], union=r["uni"], iou=r["iou"],
            topk_oracle_iou=r["topk_oracle"], upper_bound_iou=r["upper_bound"],
        ))
    ious = [x["iou"] for x in results]
    expected = dict(
        params=DEFAULTS,
        miou=float(np.mean(ious)),
        oiou=sum(x["intersection"] for x in results) / sum(x["union"] for x in results),
        topk_oracle_miou=float(np.mean([x["topk_oracle_iou"] for x in results])),
        upper_bound_miou=float(np.mean([x["upper_bound_iou"] for x in results])),
        mean_clusters_by_delta={f"{d:.1f}": c for d, c in zip(SWEEP_DELTAS, counts)},
        samples=results,
    )
    (HERE / "expected.json").write_text(json.dumps(expected, indent=1) + "\n")

    raw = np.array(results[0]["raw_map"])
    (HERE / "s000_raw_map.ppm").write_bytes(ppm(jet_bytes((bilinear(raw, H, W) + 1.0) / 2.0)))
    for x in results:
        print(x["sample_id"], "final", x["final_id"], "topk", x["topk_ids"], "k", x["clusters"],
              "iou", round(x["iou"], 4))


if __name__ == "__main__":
    main()
