"""INI-style configuration (section headers, key = value lines)."""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .align import VARIANTS, ProjectorConfig
from .decoder import DecoderConfig
from .errors import ConfigError
from .fusion import TrainConfig
from .synth import DEFAULT_CATALOG, SpectralEvent, SyntheticSpec


def _parse(path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def _floats(raw: str) -> tuple[float, ...]:
    return tuple(float(v.strip()) for v in raw.split(",") if v.strip())


@dataclass
class RunConfig:
    """Everything the CLI subcommands need, with spec defaults filled in."""

    synth: SyntheticSpec = field(default_factory=SyntheticSpec)
    split_ratios: tuple[float, float, float] = (0.6, 0.2, 0.2)
    variants: tuple[str, ...] = ("linear", "perceiver", "scc", "sca")
    seeds: tuple[int, ...] = (0,)
    task: str = "zero-context"
    d_llm: int = 64
    query_count: int = 16
    heads: int = 8
    max_positions: int = 2048
    dropout: float = 0.1
    decoder: DecoderConfig | None = None
    decoder_pretrain_epochs: int = 60
    decoder_pretrain_lr: float = 1e-3
    train: TrainConfig = field(default_factory=TrainConfig)
    max_generate_tokens: int = 80
    lexicon_path: str | None = None
    max_session_seconds: float = 10000.0
    match_window_hours: float = 24.0

    def projector_config(self, variant: str) -> ProjectorConfig:
        if variant not in VARIANTS:
            raise ConfigError(f"unknown projector variant {variant!r}")
        cfg = ProjectorConfig.desk(variant, d_llm=self.d_llm, query_count=self.query_count)
        cfg.heads = self.heads
        cfg.max_positions = self.max_positions
        cfg.dropout = self.dropout
        return cfg

    def decoder_config(self, vocab_size: int) -> DecoderConfig:
        if self.decoder is not None:
            return DecoderConfig(
                vocab_size=vocab_size,
                d_model=self.decoder.d_model,
                n_layers=self.decoder.n_layers,
                heads=self.decoder.heads,
                ff_mult=self.decoder.ff_mult,
                max_positions=self.decoder.max_positions,
            )
        return DecoderConfig(vocab_size=vocab_size, d_model=self.d_llm)


def load_config(path) -> RunConfig:
    parser = _parse(path)
    cfg = RunConfig()

    if parser.has_section("synth"):
        s = parser["synth"]
        cfg.synth = SyntheticSpec(
            n_pairs=s.getint("n_pairs", cfg.synth.n_pairs),
            epochs_min=s.getint("epochs_min", cfg.synth.epochs_min),
            epochs_max=s.getint("epochs_max", cfg.synth.epochs_max),
            noise_uv=s.getfloat("noise_uv", cfg.synth.noise_uv),
            seed=s.getint("seed", cfg.synth.seed),
            sample_rate_hz=s.getfloat("sample_rate_hz", cfg.synth.sample_rate_hz),
            keep_edf=s.getboolean("keep_edf", cfg.synth.keep_edf),
            events=_events_from(parser),
        )
        if "split" in s:
            ratios = _floats(s["split"])
            if len(ratios) != 3:
                raise ConfigError(f"split needs 3 ratios, got {ratios}")
            cfg.split_ratios = ratios  # validated by patient_split

    if parser.has_section("projector"):
        p = parser["projector"]
        if "variants" in p:
            cfg.variants = tuple(v.strip() for v in p["variants"].split(",") if v.strip())
        cfg.d_llm = p.getint("d_llm", cfg.d_llm)
        cfg.query_count = p.getint("query_count", cfg.query_count)
        cfg.heads = p.getint("heads", cfg.heads)
        cfg.max_positions = p.getint("max_positions", cfg.max_positions)
        cfg.dropout = p.getfloat("dropout", cfg.dropout)

    if parser.has_section("decoder"):
        d = parser["decoder"]
        cfg.decoder = DecoderConfig(
            vocab_size=0,
            d_model=d.getint("d_model", cfg.d_llm),
            n_layers=d.getint("n_layers", 2),
            heads=d.getint("heads", 4),
            ff_mult=d.getint("ff_mult", 4),
            max_positions=d.getint("max_positions", 512),
        )
        cfg.decoder_pretrain_epochs = d.getint("pretrain_epochs", cfg.decoder_pretrain_epochs)
        cfg.decoder_pretrain_lr = d.getfloat("pretrain_lr", cfg.decoder_pretrain_lr)

    if parser.has_section("train"):
        t = parser["train"]
        cfg.train = TrainConfig(
            batch_size=t.getint("batch_size", 4),
            grad_accum=t.getint("grad_accum", 4),
            lr=t.getfloat("lr", 1e-4),
            weight_decay=t.getfloat("weight_decay", 0.01),
            betas=(t.getfloat("beta1", 0.9), t.getfloat("beta2", 0.99)),
            epochs=t.getint("epochs", 10),
            warmup_ratio=t.getfloat("warmup_ratio", 0.1),
            seed=t.getint("seed", 0),
        )
        if "seeds" in t:
            cfg.seeds = tuple(int(v.strip()) for v in t["seeds"].split(",") if v.strip())

    if parser.has_section("task"):
        cfg.task = parser["task"].get("mode", cfg.task).strip()
        if cfg.task not in ("zero-context", "with-context"):
            raise ConfigError(f"task mode must be zero-context or with-context, got {cfg.task!r}")
        cfg.max_generate_tokens = parser["task"].getint("max_generate_tokens", cfg.max_generate_tokens)

    if parser.has_section("structure"):
        st = parser["structure"]
        cfg.lexicon_path = st.get("lexicon", None)
        cfg.max_session_seconds = st.getfloat("max_session_seconds", cfg.max_session_seconds)
        cfg.match_window_hours = st.getfloat("match_window_hours", cfg.match_window_hours)

    return cfg


def _events_from(parser: configparser.ConfigParser) -> list[SpectralEvent]:
    """Optional [event:<name>] sections override the default catalog."""
    events = []
    for section in parser.sections():
        if not section.startswith("event:"):
            continue
        e = parser[section]
        try:
            events.append(
                SpectralEvent(
                    name=section.split(":", 1)[1],
                    freq_hz=e.getfloat("freq_hz"),
                    channels=[c.strip() for c in e.get("channels").split(",")],
                    amplitude_uv=e.getfloat("amplitude_uv"),
                    probability=e.getfloat("probability"),
                    phrase=e.get("phrase"),
                    epoch_fraction=e.getfloat("epoch_fraction", 0.4),
                )
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"[{section}]: {exc}") from None
    return events or list(DEFAULT_CATALOG)


def config_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]
