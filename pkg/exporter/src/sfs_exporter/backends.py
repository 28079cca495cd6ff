"""Model backends for the exporter.

`classical` needs no checkpoints: felzenszwalb superpixels stand in for
the mask generator, nearest-color and brightness quantization stand in
for the two closed-set segmenters, captions are color/tone templates,
and embeddings are color-histogram features (region vectors from actual
pixels, text vectors from prototype patches, so the cosine ranking is
meaningful). `hf` drives real checkpoints (ultralytics FastSAM,
transformers BLIP/CLIP) when they are available locally; each stage
fails independently so partial exports still validate.
"""
from __future__ import annotations

import hashlib

import numpy as np
from skimage.segmentation import felzenszwalb


class StageFailure(RuntimeError):
    """One export stage could not run; the others may still proceed."""


# name -> prototype RGB in [0, 1]
COLOR_PROTOTYPES = {
    "red": (0.80, 0.15, 0.15),
    "orange": (0.90, 0.55, 0.10),
    "yellow": (0.90, 0.85, 0.20),
    "green": (0.20, 0.65, 0.25),
    "cyan": (0.20, 0.75, 0.75),
    "blue": (0.20, 0.30, 0.80),
    "purple": (0.55, 0.25, 0.70),
    "pink": (0.90, 0.55, 0.70),
    "brown": (0.45, 0.30, 0.15),
    "gray": (0.50, 0.50, 0.50),
    "black": (0.08, 0.08, 0.08),
    "white": (0.92, 0.92, 0.92),
}
COLOR_NAMES = tuple(COLOR_PROTOTYPES)

# name -> representative luminance of a brightness band
TONE_BANDS = {"dark": 0.125, "dim": 0.375, "bright": 0.625, "light": 0.875}
TONE_NAMES = tuple(TONE_BANDS)

EMBED_DIM = 32  # 8 bins x 3 channels + 8 luminance bins
HIST_BINS = 8


def _features(pixels: np.ndarray) -> np.ndarray:
    """Normalized color+luminance histogram of an (N, 3) float pixel block."""
    parts = []
    for c in range(3):
        hist, _ = np.histogram(pixels[:, c], bins=HIST_BINS, range=(0.0, 1.0))
        parts.append(hist)
    lum = pixels @ np.array([0.299, 0.587, 0.114])
    hist, _ = np.histogram(lum, bins=HIST_BINS, range=(0.0, 1.0))
    parts.append(hist)
    vec = np.concatenate(parts).astype(np.float64)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else np.full(EMBED_DIM, 1.0 / np.sqrt(EMBED_DIM))


def _word_seed_vector(word: str) -> np.ndarray:
    seed = int.from_bytes(hashlib.sha256(word.encode()).digest()[:8], "little")
    vec = np.random.default_rng(seed).normal(size=EMBED_DIM)
    return vec / np.linalg.norm(vec)


class ClassicalBackend:
    """Deterministic, checkpoint-free reference backend."""

    name = "classical"
    model_ids = {
        "masks": "felzenszwalb(scale=200, sigma=0.8, min_size=400)",
        "maps": "nearest-color + luminance-band quantizers",
        "captions": "color/tone template",
        "embeddings": f"color-histogram {EMBED_DIM}d",
    }

    def __init__(self, max_masks: int = 100):
        self.max_masks = max_masks
        self._word_cache: dict[str, np.ndarray] = {}

    def generate_masks(self, image: np.ndarray):
        """(bool mask, confidence) pairs, largest regions first."""
        seg = felzenszwalb(image, scale=200, sigma=0.8, min_size=400)
        labels, areas = np.unique(seg, return_counts=True)
        order = np.argsort(-areas, kind="stable")
        out = []
        max_area = float(areas.max())
        for rank in order[: self.max_masks]:
            mask = seg == labels[rank]
            conf = round(0.35 + 0.6 * float(areas[rank]) / max_area, 6)
            out.append((mask, conf))
        return out

    def semantic_maps(self, image: np.ndarray):
        """Two closed-set maps: color classes and brightness bands."""
        protos = np.array(list(COLOR_PROTOTYPES.values()))
        dists = ((image[:, :, None, :] - protos[None, None, :, :]) ** 2).sum(axis=-1)
        color_map = dists.argmin(axis=-1).astype(np.uint16)
        lum = image @ np.array([0.299, 0.587, 0.114])
        tone_map = np.clip((lum * len(TONE_BANDS)).astype(np.int64), 0,
                           len(TONE_BANDS) - 1).astype(np.uint16)
        return [("colorstuff", COLOR_NAMES, color_map), ("tone", TONE_NAMES, tone_map)]

    def caption(self, image: np.ndarray, mask: np.ndarray) -> str:
        pixels = image[mask]
        mean = pixels.mean(axis=0)
        protos = np.array(list(COLOR_PROTOTYPES.values()))
        color = COLOR_NAMES[int(((protos - mean) ** 2).sum(axis=1).argmin())]
        lum = float(mean @ np.array([0.299, 0.587, 0.114]))
        tone = TONE_NAMES[min(int(lum * len(TONE_BANDS)), len(TONE_BANDS) - 1)]
        return f"a {tone} {color} region"

    def region_embedding(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        return _features(image[mask])

    def text_embedding(self, text: str) -> np.ndarray:
        vecs = [self._word_embedding(w) for w in text.split()]
        vec = np.mean(vecs, axis=0)
        return vec / np.linalg.norm(vec)

    def _word_embedding(self, word: str) -> np.ndarray:
        if word in self._word_cache:
            return self._word_cache[word]
        if word in COLOR_PROTOTYPES:
            patch = np.tile(np.array(COLOR_PROTOTYPES[word]), (256, 1))
            vec = _features(patch)
        elif word in TONE_BANDS:
            patch = np.tile(np.full(3, TONE_BANDS[word]), (256, 1))
            vec = _features(patch)
        else:
            vec = _word_seed_vector(word)
        self._word_cache[word] = vec
        return vec


class HFBackend(ClassicalBackend):
    """Real checkpoints where available; stages fail independently.

    Mask generation uses ultralytics FastSAM, captions use BLIP, and
    embeddings use CLIP via transformers. Every model must already be on
    disk; there is no download path in restricted environments, in which
    case each stage raises StageFailure and the export records a marker.
    """

    name = "hf"

    def __init__(self, max_masks: int = 100, fastsam_weights: str | None = None,
                 blip_model: str = "Salesforce/blip-image-captioning-base",
                 clip_model: str = "openai/clip-vit-base-patch32"):
        super().__init__(max_masks=max_masks)
        self.fastsam_weights = fastsam_weights
        self.blip_model = blip_model
        self.clip_model = clip_model
        self.model_ids = {
            "masks": f"FastSAM({fastsam_weights})",
            "maps": "nearest-color + luminance-band quantizers",
            "captions": blip_model,
            "embeddings": clip_model,
        }
        self._blip = None
        self._clip = None

    def generate_masks(self, image: np.ndarray):
        if not self.fastsam_weights:
            raise StageFailure("masks: no FastSAM weights supplied (--fastsam-weights)")
        try:
            from ultralytics import FastSAM
        except ImportError as e:
            raise StageFailure(f"masks: ultralytics not installed: {e}") from e
        try:
            model = FastSAM(self.fastsam_weights)
            results = model((image * 255).astype(np.uint8), retina_masks=True, verbose=False)
        except Exception as e:
            raise StageFailure(f"masks: FastSAM inference failed: {e}") from e
        out = []
        r = results[0]
        if r.masks is None:
            return out
        confs = r.boxes.conf.tolist() if r.boxes is not None else []
        for i, m in enumerate(r.masks.data.cpu().numpy().astype(bool)):
            if not m.any():
                continue
            conf = round(float(confs[i]) if i < len(confs) else 0.5, 6)
            out.append((m, min(max(conf, 0.0), 1.0)))
        out.sort(key=lambda p: -int(p[0].sum()))
        return out[: self.max_masks]

    def caption(self, image: np.ndarray, mask: np.ndarray) -> str:
        try:
            proc, model = self._load_blip()
            ys, xs = np.where(mask)
            crop = (image[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1] * 255).astype(np.uint8)
            inputs = proc(images=crop, return_tensors="pt")
            ids = model.generate(**inputs, max_new_tokens=20)
            return proc.decode(ids[0], skip_special_tokens=True)
        except StageFailure:
            raise
        except Exception as e:
            raise StageFailure(f"captions: BLIP failed: {e}") from e

    def _load_blip(self):
        if self._blip is None:
            try:
                from transformers import BlipForConditionalGeneration, BlipProcessor

                proc = BlipProcessor.from_pretrained(self.blip_model, local_files_only=True)
                model = BlipForConditionalGeneration.from_pretrained(
                    self.blip_model, local_files_only=True
                )
                self._blip = (proc, model)
            except Exception as e:
                raise StageFailure(f"captions: cannot load {self.blip_model}: {e}") from e
        return self._blip

    def _load_clip(self):
        if self._clip is None:
            try:
                from transformers import CLIPModel, CLIPProcessor

                proc = CLIPProcessor.from_pretrained(self.clip_model, local_files_only=True)
                model = CLIPModel.from_pretrained(self.clip_model, local_files_only=True)
                self._clip = (proc, model)
            except Exception as e:
                raise StageFailure(f"embeddings: cannot load {self.clip_model}: {e}") from e
        return self._clip

    def region_embedding(self, image: np.ndarray, mask: np.ndarray) -> np.ndarray:
        try:
            proc, model = self._load_clip()
            ys, xs = np.where(mask)
            crop = (image[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1] * 255).astype(np.uint8)
            inputs = proc(images=crop, return_tensors="pt")
            vec = model.get_image_features(**inputs)[0].detach().numpy().astype(np.float64)
            return vec / np.linalg.norm(vec)
        except StageFailure:
            raise
        except Exception as e:
            raise StageFailure(f"embeddings: CLIP image tower failed: {e}") from e

    def text_embedding(self, text: str) -> np.ndarray:
        try:
            proc, model = self._load_clip()
            inputs = proc(text=[text], return_tensors="pt", padding=True)
            vec = model.get_text_features(**inputs)[0].detach().numpy().astype(np.float64)
            return vec / np.linalg.norm(vec)
        except StageFailure:
            raise
        except Exception as e:
            raise StageFailure(f"embeddings: CLIP text tower failed: {e}") from e


BACKENDS = {"classical": ClassicalBackend, "hf": HFBackend}
