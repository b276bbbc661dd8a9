"""1-d transformer encoder, projection/prediction heads, student/teacher pair.

The encoder patchifies a 1000-sample strip into 50 non-overlapping tokens of
20 samples, adds learned positional embeddings, runs pre-norm transformer
blocks (GELU MLP, ratio 4), applies a final layer norm and mean-pools tokens
into one embedding h.

Two projector MLPs map h to the invariant branch z_iv and the tempo branch
z_tv; in split mode they instead read disjoint halves of h. Predictors exist
only on the student and map a student projection onto the teacher's
projection space. The teacher is a structural clone of the student's encoder
+ projectors, updated by EMA and never by gradients; at construction the two
are bitwise equal.

Checkpoints are a single binary file: a JSON header (configs, step, array
directory) followed by the raw little-endian buffers of every student,
teacher and optimizer array, so a resumed run restarts bit-exact.
"""

import json
from dataclasses import dataclass, asdict

import numpy as np

from . import autograd as ag

CKPT_MAGIC = b"PLITACK1"
CKPT_VERSION = 1


@dataclass
class EncoderConfig:
    input_len: int = 1000
    patch: int = 20
    dim: int = 128
    depth: int = 6
    heads: int = 4
    mlp_ratio: float = 4.0

    def __post_init__(self):
        if self.input_len % self.patch:
            raise ValueError(
                f"input_len {self.input_len} not divisible by patch {self.patch}"
            )
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")

    @property
    def tokens(self):
        return self.input_len // self.patch


@dataclass
class HeadConfig:
    proj_hidden: int = 512
    proj_out: int = 512
    pred_hidden: int = 256
    split_mode: bool = False


def _trunc_normal(rng, shape, std=0.02):
    # plain normal clipped to +/- 2 std
    return np.clip(rng.normal(0.0, std, size=shape), -2 * std, 2 * std)


class Linear:
    def __init__(self, d_in, d_out, rng, dtype, name):
        self.W = ag.parameter(_trunc_normal(rng, (d_in, d_out)).astype(dtype), f"{name}.W")
        self.b = ag.parameter(np.zeros(d_out, dtype=dtype), f"{name}.b")

    def __call__(self, x):
        return ag.matmul(x, self.W) + self.b

    def params(self):
        return [self.W, self.b]


class LayerNorm:
    def __init__(self, dim, dtype, name, eps=1e-5):
        self.gamma = ag.parameter(np.ones(dim, dtype=dtype), f"{name}.gamma")
        self.beta = ag.parameter(np.zeros(dim, dtype=dtype), f"{name}.beta")
        self.eps = eps

    def __call__(self, x):
        return ag.layer_norm(x, self.gamma, self.beta, self.eps)

    def params(self):
        return [self.gamma, self.beta]


class Attention:
    def __init__(self, dim, heads, rng, dtype, name):
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.qkv = Linear(dim, 3 * dim, rng, dtype, f"{name}.qkv")
        self.proj = Linear(dim, dim, rng, dtype, f"{name}.proj")
        self.scale = 1.0 / np.sqrt(self.head_dim)

    def __call__(self, x):
        b, t, d = x.shape
        flat = ag.reshape(x, (b * t, d))
        qkv = self.qkv(flat)  # [b*t, 3d]

        def heads_view(cols):
            h = ag.reshape(cols, (b, t, self.heads, self.head_dim))
            return ag.transpose(h, (0, 2, 1, 3))  # [b, H, t, hd]

        q = heads_view(qkv[:, : self.dim])
        k = heads_view(qkv[:, self.dim : 2 * self.dim])
        v = heads_view(qkv[:, 2 * self.dim :])
        att = ag.softmax(ag.matmul(q, ag.transpose(k, (0, 1, 3, 2))) * self.scale)
        ctx = ag.matmul(att, v)  # [b, H, t, hd]
        ctx = ag.reshape(ag.transpose(ctx, (0, 2, 1, 3)), (b * t, d))
        return ag.reshape(self.proj(ctx), (b, t, d))

    def params(self):
        return self.qkv.params() + self.proj.params()


class Block:
    def __init__(self, dim, heads, mlp_ratio, rng, dtype, name):
        hidden = int(dim * mlp_ratio)
        self.ln1 = LayerNorm(dim, dtype, f"{name}.ln1")
        self.attn = Attention(dim, heads, rng, dtype, f"{name}.attn")
        self.ln2 = LayerNorm(dim, dtype, f"{name}.ln2")
        self.fc1 = Linear(dim, hidden, rng, dtype, f"{name}.fc1")
        self.fc2 = Linear(hidden, dim, rng, dtype, f"{name}.fc2")

    def __call__(self, x):
        x = x + self.attn(self.ln1(x))
        b, t, d = x.shape
        flat = ag.reshape(self.ln2(x), (b * t, d))
        m = self.fc2(ag.gelu(self.fc1(flat)))
        return x + ag.reshape(m, (b, t, d))

    def params(self):
        return (
            self.ln1.params()
            + self.attn.params()
            + self.ln2.params()
            + self.fc1.params()
            + self.fc2.params()
        )


class Encoder:
    def __init__(self, cfg, rng, dtype, name):
        self.cfg = cfg
        self.embed = Linear(cfg.patch, cfg.dim, rng, dtype, f"{name}.embed")
        self.pos = ag.parameter(
            _trunc_normal(rng, (cfg.tokens, cfg.dim)).astype(dtype), f"{name}.pos"
        )
        self.blocks = [
            Block(cfg.dim, cfg.heads, cfg.mlp_ratio, rng, dtype, f"{name}.block{i}")
            for i in range(cfg.depth)
        ]
        self.ln_f = LayerNorm(cfg.dim, dtype, f"{name}.ln_f")

    def __call__(self, x):
        if x.ndim != 2 or x.shape[1] != self.cfg.input_len:
            raise ag.ShapeError(
                f"encoder expects [batch, {self.cfg.input_len}], got {x.shape}"
            )
        b = x.shape[0]
        t = self.cfg.tokens
        tok = ag.reshape(x, (b * t, self.cfg.patch))
        tok = ag.reshape(self.embed(tok), (b, t, self.cfg.dim))
        h = tok + self.pos
        for blk in self.blocks:
            h = blk(h)
        h = self.ln_f(h)
        return ag.mean(h, axis=1)

    def params(self):
        out = self.embed.params() + [self.pos]
        for blk in self.blocks:
            out += blk.params()
        return out + self.ln_f.params()


class MLPHead:
    """Two-layer GELU MLP used for projectors and predictors."""

    def __init__(self, d_in, d_hidden, d_out, rng, dtype, name):
        self.fc1 = Linear(d_in, d_hidden, rng, dtype, f"{name}.fc1")
        self.fc2 = Linear(d_hidden, d_out, rng, dtype, f"{name}.fc2")

    def __call__(self, x):
        return self.fc2(ag.gelu(self.fc1(x)))

    def params(self):
        return self.fc1.params() + self.fc2.params()


class GRUHead:
    """Single-layer GRU over an embedding sequence plus a linear classifier."""

    def __init__(self, d_in, n_classes, rng, dtype=np.float32, hidden=64, name="gru"):
        self.hidden = hidden
        scale = 1.0 / np.sqrt(hidden)
        self.Wx = ag.parameter(
            rng.uniform(-scale, scale, (d_in, 3 * hidden)).astype(dtype), f"{name}.Wx"
        )
        self.Wh = ag.parameter(
            rng.uniform(-scale, scale, (hidden, 3 * hidden)).astype(dtype), f"{name}.Wh"
        )
        self.bx = ag.parameter(np.zeros(3 * hidden, dtype=dtype), f"{name}.bx")
        self.bh = ag.parameter(np.zeros(3 * hidden, dtype=dtype), f"{name}.bh")
        self.out = Linear(hidden, n_classes, rng, dtype, f"{name}.out")

    def __call__(self, seq):
        """seq [B, T, D] -> logits [B, n_classes]."""
        b, t, _ = seq.shape
        hsz = self.hidden
        h = ag.constant(np.zeros((b, hsz)), seq.dtype)
        for step in range(t):
            x_t = seq[:, step, :]
            gx = ag.matmul(x_t, self.Wx) + self.bx
            gh = ag.matmul(h, self.Wh) + self.bh
            z = ag.sigmoid(gx[:, :hsz] + gh[:, :hsz])
            r = ag.sigmoid(gx[:, hsz : 2 * hsz] + gh[:, hsz : 2 * hsz])
            n = ag.tanh(gx[:, 2 * hsz :] + r * gh[:, 2 * hsz :])
            h = (1.0 - z) * n + z * h
        return self.out(h)

    def params(self):
        return [self.Wx, self.Wh, self.bx, self.bh] + self.out.params()


def _build_side(enc_cfg, head_cfg, rng, dtype, side):
    proj_in = enc_cfg.dim // 2 if head_cfg.split_mode else enc_cfg.dim
    return {
        "encoder": Encoder(enc_cfg, rng, dtype, f"{side}.encoder"),
        "g_iv": MLPHead(proj_in, head_cfg.proj_hidden, head_cfg.proj_out, rng, dtype, f"{side}.g_iv"),
        "g_tv": MLPHead(proj_in, head_cfg.proj_hidden, head_cfg.proj_out, rng, dtype, f"{side}.g_tv"),
    }


class ModelPair:
    """Student (encoder, two projectors, two predictors) + EMA teacher."""

    def __init__(self, enc_cfg, head_cfg, tau=0.995, dtype=np.float32, seed=0):
        if head_cfg.split_mode and enc_cfg.dim % 2:
            raise ValueError(f"split mode needs an even dim, got {enc_cfg.dim}")
        self.enc_cfg = enc_cfg
        self.head_cfg = head_cfg
        self.tau = float(tau)
        self.dtype = np.dtype(dtype).type
        rng = np.random.Generator(
            np.random.Philox(key=np.array([seed, 2**48], dtype=np.uint64))
        )
        s = _build_side(enc_cfg, head_cfg, rng, self.dtype, "student")
        self.encoder = s["encoder"]
        self.g_iv = s["g_iv"]
        self.g_tv = s["g_tv"]
        self.q_iv = MLPHead(
            head_cfg.proj_out, head_cfg.pred_hidden, head_cfg.proj_out, rng, self.dtype, "student.q_iv"
        )
        self.q_tv = MLPHead(
            head_cfg.proj_out, head_cfg.pred_hidden, head_cfg.proj_out, rng, self.dtype, "student.q_tv"
        )
        t = _build_side(enc_cfg, head_cfg, rng, self.dtype, "teacher")
        self.t_encoder = t["encoder"]
        self.t_g_iv = t["g_iv"]
        self.t_g_tv = t["g_tv"]
        # the teacher starts as an exact copy and never sees gradients
        for sp, tp in zip(self._ema_student_params(), self.teacher_params()):
            tp.data[...] = sp.data
            tp.requires_grad = False

    def student_params(self):
        return (
            self.encoder.params()
            + self.g_iv.params()
            + self.g_tv.params()
            + self.q_iv.params()
            + self.q_tv.params()
        )

    def _ema_student_params(self):
        # the subset mirrored into the teacher: encoder + projectors
        return self.encoder.params() + self.g_iv.params() + self.g_tv.params()

    def teacher_params(self):
        return self.t_encoder.params() + self.t_g_iv.params() + self.t_g_tv.params()

    def encode(self, x, network="student"):
        if not isinstance(x, ag.Tensor):
            x = ag.Tensor(np.asarray(x, dtype=self.dtype))
        enc = self.encoder if network == "student" else self.t_encoder
        return enc(x)

    def project(self, h, branch, network="student"):
        if branch not in ("iv", "tv"):
            raise ValueError(f"branch must be 'iv' or 'tv', got {branch!r}")
        if self.head_cfg.split_mode:
            half = self.enc_cfg.dim // 2
            h = h[:, :half] if branch == "iv" else h[:, half:]
        if network == "student":
            g = self.g_iv if branch == "iv" else self.g_tv
        else:
            g = self.t_g_iv if branch == "iv" else self.t_g_tv
        z = g(h)
        z.source = (network, branch)
        return z

    def predict(self, z, branch):
        """Student-only predictor; refuses projections it was not built for."""
        src = getattr(z, "source", None)
        if src != ("student", branch):
            raise ValueError(
                f"predictor q_{branch} expects a student {branch!r} projection, "
                f"got source {src}"
            )
        q = self.q_iv if branch == "iv" else self.q_tv
        return q(z)

    def ema_update(self):
        """teacher <- tau*teacher + (1-tau)*student, elementwise in float64."""
        tau = self.tau
        for sp, tp in zip(self._ema_student_params(), self.teacher_params()):
            assert sp.name.split(".", 1)[1] == tp.name.split(".", 1)[1]
            mixed = tau * tp.data.astype(np.float64) + (1.0 - tau) * sp.data.astype(np.float64)
            tp.data[...] = mixed.astype(tp.data.dtype)

    def ema_gap(self):
        """L2 distance between student and teacher over the mirrored subset."""
        acc = 0.0
        for sp, tp in zip(self._ema_student_params(), self.teacher_params()):
            d = sp.data.astype(np.float64) - tp.data.astype(np.float64)
            acc += float(np.sum(d * d))
        return float(np.sqrt(acc))

    def all_named_arrays(self):
        out = {}
        for p in self.student_params() + self.teacher_params():
            out[p.name] = p.data
        return out

    def n_params(self):
        return int(sum(p.data.size for p in self.student_params()))


# --- checkpoint io -----------------------------------------------------------


def save_checkpoint(path, pair, optimizer=None, step=0, train_config=None):
    arrays = dict(pair.all_named_arrays())
    if optimizer is not None:
        arrays.update(optimizer.state_arrays())
    directory = []
    offset = 0
    blobs = []
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        blob = a.astype("<" + a.dtype.str[1:], copy=False).tobytes()
        directory.append(
            {"name": name, "shape": list(a.shape), "dtype": a.dtype.name, "offset": offset}
        )
        offset += len(blob)
        blobs.append(blob)
    header = {
        "version": CKPT_VERSION,
        "step": int(step),
        "tau": pair.tau,
        "dtype": np.dtype(pair.dtype).name,
        "encoder": asdict(pair.enc_cfg),
        "heads": asdict(pair.head_cfg),
        "optimizer_step": optimizer.step_count if optimizer is not None else None,
        "train_config": train_config,
        "arrays": directory,
    }
    head = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(len(head).to_bytes(8, "little"))
        f.write(head)
        for blob in blobs:
            f.write(blob)


def read_checkpoint(path):
    """Returns (header dict, {name: array})."""
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != CKPT_MAGIC:
            raise ValueError(f"{path} is not a checkpoint (magic {magic!r})")
        head_len = int.from_bytes(f.read(8), "little")
        header = json.loads(f.read(head_len))
        if header["version"] != CKPT_VERSION:
            raise ValueError(f"checkpoint version {header['version']} unsupported")
        body = f.read()
    arrays = {}
    for ent in header["arrays"]:
        dt = np.dtype(ent["dtype"]).newbyteorder("<")
        count = int(np.prod(ent["shape"])) if ent["shape"] else 1
        start = ent["offset"]
        arr = np.frombuffer(body, dtype=dt, count=count, offset=start)
        arrays[ent["name"]] = arr.reshape(ent["shape"]).astype(ent["dtype"])
    return header, arrays


def load_model_pair(path):
    """Rebuild a ModelPair (weights + teacher) from a checkpoint file."""
    header, arrays = read_checkpoint(path)
    enc_cfg = EncoderConfig(**header["encoder"])
    head_cfg = HeadConfig(**header["heads"])
    pair = ModelPair(enc_cfg, head_cfg, tau=header["tau"], dtype=np.dtype(header["dtype"]))
    restore_weights(pair, arrays)
    return pair, header, arrays


def restore_weights(pair, arrays):
    for p in pair.student_params() + pair.teacher_params():
        if p.name not in arrays:
            raise KeyError(f"checkpoint is missing array {p.name!r}")
        a = arrays[p.name]
        if tuple(a.shape) != p.data.shape:
            raise ValueError(
                f"checkpoint array {p.name!r} has shape {tuple(a.shape)}, "
                f"model needs {p.data.shape}"
            )
        p.data[...] = a.astype(p.data.dtype)
