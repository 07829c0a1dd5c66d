"""Forward-hook capture of layer representations and batch-norm running statistics."""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace

import torch
import torch.nn as nn

from leaps.errors import NotBatchNormError, ShapeError, UnknownLayerError
from leaps.types import ActivationRecord, VideoTensor, resample_video


@dataclass
class CaptureSession:
    model_ref: nn.Module
    layer_ids: tuple[str, ...]
    records: dict[str, ActivationRecord]
    logits: torch.Tensor


def _module(model: nn.Module, layer_id: str) -> nn.Module:
    try:
        return model.get_submodule(layer_id)
    except AttributeError:
        raise UnknownLayerError(f"model has no layer {layer_id!r}") from None


def prepare_input(model: nn.Module, v) -> torch.Tensor:
    """Batch a video (adding B=1 if needed) and resample it to a fixed-size model's input."""
    x = v.data if isinstance(v, VideoTensor) else v
    if x.dim() == 4:
        x = x.unsqueeze(0)
    if x.dim() != 5 or x.shape[1] != 3:
        raise ShapeError(f"expected (B,) 3 x T x H x W input, got {tuple(x.shape)}")
    size = getattr(model, "input_size", None)
    if size is not None:
        x = resample_video(x, *size)
    return x


def capture(model: nn.Module, v, layer_ids) -> CaptureSession:
    """Run ``model`` on ``v`` recording every requested layer.

    Batch-norm layers record their input (the quantity their running statistics
    track); every other layer records its output. Captured tensors stay on the
    autograd graph.
    """
    layer_ids = tuple(layer_ids)
    modules = {lid: _module(model, lid) for lid in layer_ids}
    x = prepare_input(model, v)
    raw: dict[str, torch.Tensor] = {}
    handles = []
    for lid, mod in modules.items():
        if isinstance(mod, nn.modules.batchnorm._BatchNorm):
            handles.append(mod.register_forward_hook(lambda m, i, o, lid=lid: raw.__setitem__(lid, i[0])))
        else:
            handles.append(mod.register_forward_hook(lambda m, i, o, lid=lid: raw.__setitem__(lid, o)))
    try:
        try:
            logits = model(x)
        except RuntimeError as e:
            raise ShapeError(f"model rejected input of shape {tuple(x.shape)}: {e}") from None
    finally:
        for h in handles:
            h.remove()
    records = {}
    for lid in layer_ids:
        geo = model.layer_geometry(lid) if hasattr(model, "layer_geometry") else {"kind": "conv_volume"}
        t = raw[lid]
        if geo["kind"] == "patch_tokens":
            records[lid] = ActivationRecord.from_tensor(lid, t.transpose(1, 2), "patch_tokens",
                                                        tuple(geo["patch"]), tuple(geo["grid"]))
        else:
            records[lid] = ActivationRecord.from_tensor(lid, t)
    return CaptureSession(model, layer_ids, records, logits)


def tokens_to_volume(rec: ActivationRecord, flatten: bool = True) -> ActivationRecord:
    """Re-index (B, C'*P, N) tokens into a (B, C', T', H'*W', 1) volume.

    Each token's vector is channel-major over its patch voxels (pt, ph, pw) and
    tokens run t-major, then h, then w. ``flatten=False`` keeps H' and W'
    separate.
    """
    if rec.kind != "patch_tokens":
        raise ShapeError(f"record {rec.layer_id!r} is not patch tokens")
    pt, ph, pw = rec.patch
    gt, gh, gw = rec.grid
    B, D, N = rec.tensor.shape
    vol = pt * ph * pw
    if D % vol or N != gt * gh * gw:
        raise ShapeError(f"tokens {D}x{N} incompatible with patch {rec.patch} and grid {rec.grid}")
    c = D // vol
    t = rec.tensor.reshape(B, c, pt, ph, pw, gt, gh, gw).permute(0, 1, 5, 2, 6, 3, 7, 4)
    T, H, W = gt * pt, gh * ph, gw * pw
    t = t.reshape(B, c, T, H * W, 1) if flatten else t.reshape(B, c, T, H, W)
    out = ActivationRecord.from_tensor(rec.layer_id, t)
    return replace(out, patch=rec.patch, grid=rec.grid)


def volume_to_tokens(rec: ActivationRecord) -> ActivationRecord:
    """Inverse of :func:`tokens_to_volume` (flattened or not)."""
    if rec.patch is None or rec.grid is None:
        raise ShapeError("volume record carries no patch geometry to invert")
    pt, ph, pw = rec.patch
    gt, gh, gw = rec.grid
    B, c = rec.tensor.shape[:2]
    t = rec.tensor.reshape(B, c, gt, pt, gh, ph, gw, pw).permute(0, 1, 3, 5, 7, 2, 4, 6)
    t = t.reshape(B, c * pt * ph * pw, gt * gh * gw)
    return ActivationRecord.from_tensor(rec.layer_id, t, "patch_tokens", rec.patch, rec.grid)


def volume_record(rec: ActivationRecord) -> ActivationRecord:
    """Time-indexed view of a record: tokens are reshaped, volumes pass through."""
    return tokens_to_volume(rec) if rec.kind == "patch_tokens" else rec


def read_bn_stats(model: nn.Module, layer_ids) -> dict[str, tuple[torch.Tensor, torch.Tensor]]:
    out = {}
    for lid in layer_ids:
        mod = _module(model, lid)
        if not isinstance(mod, nn.modules.batchnorm._BatchNorm) or mod.running_mean is None:
            raise NotBatchNormError(f"layer {lid!r} has no running statistics")
        out[lid] = (mod.running_mean.detach().clone(), mod.running_var.detach().clone())
    return out


def param_checksum(model: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, t in model.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def patch_volume(rec: ActivationRecord) -> int:
    return math.prod(rec.patch) if rec.patch else 1
