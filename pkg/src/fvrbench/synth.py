"""Seeded parametric "ellipse faces" for zero-download demos and tests.

Each identity draws a fixed set of facial geometry and tone parameters;
each image of that identity perturbs them slightly (pose shift, lighting,
expression, sensor noise). Rendering happens in continuous coordinates so
any output size works.
"""

import numpy as np

from .corpus import Gallery


def _soft(d, edge):
    # d < 0 inside the shape; logistic edge of width ~edge
    return 1.0 / (1.0 + np.exp(np.clip(d / edge, -50, 50)))


def _ellipse(xx, yy, cx, cy, ax, ay, edge):
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    return _soft(r - 1.0, edge / min(ax, ay))


def _identity_params(rng):
    return {
        "face_ax": rng.uniform(0.26, 0.38),
        "face_ay": rng.uniform(0.34, 0.46),
        "skin": rng.uniform(0.45, 0.85),
        "background": rng.uniform(0.0, 0.35),
        "hair_line": rng.uniform(0.10, 0.32),
        "hair_tone": rng.uniform(0.02, 0.45),
        "hair_width": rng.uniform(0.9, 1.25),
        "eye_sep": rng.uniform(0.12, 0.22),
        "eye_y": rng.uniform(0.38, 0.50),
        "eye_r": rng.uniform(0.03, 0.065),
        "eye_tone": rng.uniform(0.0, 0.3),
        "brow_gap": rng.uniform(0.04, 0.09),
        "brow_tone": rng.uniform(0.0, 0.4),
        "brow_len": rng.uniform(0.05, 0.10),
        "nose_len": rng.uniform(0.08, 0.18),
        "nose_w": rng.uniform(0.025, 0.06),
        "nose_tone": rng.uniform(-0.25, 0.1),
        "mouth_y": rng.uniform(0.66, 0.80),
        "mouth_w": rng.uniform(0.10, 0.24),
        "mouth_h": rng.uniform(0.015, 0.045),
        "mouth_tone": rng.uniform(0.05, 0.45),
        "cheek": rng.uniform(-0.12, 0.12),
    }


def render_face(params, size=(32, 32), shift=(0.0, 0.0), gain=1.0, light=(0.0, 0.0),
                smile=1.0):
    """Render one face. ``size`` is (width, height)."""
    w, h = size
    xx, yy = np.meshgrid((np.arange(w) + 0.5) / w, (np.arange(h) + 0.5) / h)
    xx = xx - shift[0]
    yy = yy - shift[1]
    p = params
    edge = 0.6 / max(w, h)
    cx, cy = 0.5, 0.54

    img = np.full((h, w), p["background"])
    face = _ellipse(xx, yy, cx, cy, p["face_ax"], p["face_ay"], edge)
    img = img * (1 - face) + p["skin"] * face

    cheeks = (_ellipse(xx, yy, cx - 0.17, 0.62, 0.08, 0.06, 2 * edge)
              + _ellipse(xx, yy, cx + 0.17, 0.62, 0.08, 0.06, 2 * edge))
    img = img + p["cheek"] * cheeks * face

    hair_top = cy - p["face_ay"] + p["hair_line"]
    hair = _ellipse(xx, yy, cx, cy - 0.04, p["face_ax"] * p["hair_width"],
                    p["face_ay"] + 0.05, edge) * _soft(yy - hair_top, edge)
    img = img * (1 - hair) + p["hair_tone"] * hair

    for sgn in (-1, 1):
        ex = cx + sgn * p["eye_sep"]
        eye = _ellipse(xx, yy, ex, p["eye_y"], p["eye_r"] * 1.4, p["eye_r"], edge)
        img = img * (1 - eye) + p["eye_tone"] * eye
        brow = _ellipse(xx, yy, ex, p["eye_y"] - p["brow_gap"], p["brow_len"], 0.012, edge)
        img = img * (1 - brow) + p["brow_tone"] * brow

    nose_cy = p["eye_y"] + p["nose_len"] / 2 + 0.03
    nose = _ellipse(xx, yy, cx, nose_cy, p["nose_w"], p["nose_len"] / 2, edge)
    img = img + p["nose_tone"] * 0.5 * nose

    mouth = _ellipse(xx, yy, cx, p["mouth_y"], p["mouth_w"] * smile, p["mouth_h"], edge)
    img = img * (1 - mouth) + p["mouth_tone"] * mouth

    img = img * gain + light[0] * (xx - 0.5) + light[1] * (yy - 0.5)
    return img


def make_synthetic_gallery(n_identities=40, images_per_identity=4, size=(32, 32), seed=0,
                           variation=1.0):
    """Generate a labeled gallery of ``n_identities`` synthetic faces.

    ``variation`` scales every per-image perturbation; 0 renders each
    identity identically.
    """
    images, labels = [], []
    for i in range(n_identities):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        params = _identity_params(rng)
        for _ in range(images_per_identity):
            v = variation
            img = render_face(
                params,
                size,
                shift=tuple(rng.normal(0.0, 0.012 * v, 2)),
                gain=1.0 + rng.normal(0.0, 0.04 * v),
                light=tuple(rng.normal(0.0, 0.06 * v, 2)),
                smile=1.0 + rng.normal(0.0, 0.08 * v),
            )
            img = img + rng.normal(0.0, 0.015 * v, img.shape)
            images.append(np.clip(img, 0.0, 1.0))
            labels.append(f"id{i:04d}")
    return Gallery(np.stack(images), labels)
