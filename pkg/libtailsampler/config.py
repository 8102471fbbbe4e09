#!/usr/bin/env python3
"""
Configuration loader for the tail sampler

Loads and validates JSON configuration files.
Provides typed access to configuration parameters.

Configuration Structure:
- encoder: anomaly weights and duration baseline (used by trace_encoder.py)
- allocator: budget and alarm boost settings (used by quota_allocator.py)
- selector: DPP early stop and similarity cache (used by dpp_selector.py)
- pipeline: window length, sampler variant, cache switch (used by pipeline.py)
- evaluation: anomaly flag threshold and rarity cut-off (used by evaluation.py)
- workload: default scenario and seed (used by workload_gen.py via tail_sampler.py)
- logging: log level (used by tail_sampler.py)
"""

import copy
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

from .dpp_selector import SelectorConfig
from .errors import ConfigError
from .pipeline import PipelineSettings, SamplerVariant
from .quota_allocator import AllocatorConfig
from .trace_encoder import AnomalyConfig

logger = logging.getLogger(__name__)

SECTIONS = ('encoder', 'allocator', 'selector', 'pipeline', 'evaluation', 'workload', 'logging')
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')


class Config:
    """Configuration container with typed access to parameters"""

    def __init__(self, config_dict: Dict[str, Any]):
        self._config = config_dict

    def _section(self, name: str) -> Dict[str, Any]:
        return self._config.get(name, {})

    # =========================================================================
    # Encoder Settings - Anomaly score weights and latency baseline
    # Used by: trace_encoder.py:anomaly_score(), GroupStats
    # =========================================================================

    @property
    def w_err(self) -> float:
        """Weight of a span with status ERROR"""
        return self._section('encoder').get('w_err', 5.0)

    @property
    def w_lw(self) -> float:
        """Weight per WARN log"""
        return self._section('encoder').get('w_lw', 1.0)

    @property
    def w_le(self) -> float:
        """Weight per ERROR log"""
        return self._section('encoder').get('w_le', 2.0)

    @property
    def perf_factor(self) -> float:
        """Root duration above perf_factor x group p90 counts as degraded"""
        return self._section('encoder').get('perf_factor', 1.2)

    @property
    def perf_score(self) -> float:
        """Score added for a degraded trace"""
        return self._section('encoder').get('perf_score', 3.0)

    @property
    def min_observations(self) -> int:
        """Observations a group needs before the latency term applies"""
        return self._section('encoder').get('min_observations', 20)

    @property
    def duration_window(self) -> int:
        """Per-group duration window capacity"""
        return self._section('encoder').get('window_capacity', 1000)

    # =========================================================================
    # Allocator Settings - Two-layer budget
    # Used by: quota_allocator.py:global_budget(), allocate()
    # =========================================================================

    @property
    def base_budget_fraction(self) -> float:
        """Target sampling rate"""
        return self._section('allocator').get('base_budget_fraction', 0.05)

    @property
    def boost_max(self) -> float:
        return self._section('allocator').get('boost_max', 3.0)

    @property
    def boost_cap_fraction(self) -> float:
        return self._section('allocator').get('boost_cap_fraction', 0.5)

    @property
    def drop_threshold(self) -> float:
        """QPM below drop_threshold x historical mean triggers budget scaling"""
        return self._section('allocator').get('drop_threshold', 0.7)

    @property
    def scale_max(self) -> float:
        return self._section('allocator').get('scale_max', 2.0)

    @property
    def qpm_history_depth(self) -> int:
        return self._section('allocator').get('qpm_history_depth', 10)

    @property
    def qpm_scaling_enabled(self) -> bool:
        return self._section('allocator').get('qpm_scaling_enabled', True)

    # =========================================================================
    # Selector Settings
    # Used by: dpp_selector.py:greedy_select(), SimilarityCache
    # =========================================================================

    @property
    def epsilon(self) -> float:
        """Greedy stops once the best marginal gain drops below this"""
        return self._section('selector').get('epsilon', 1e-3)

    @property
    def cache_capacity(self) -> int:
        """Similarity cache entries kept before LRU eviction"""
        return self._section('selector').get('cache_capacity', 1 << 20)

    # =========================================================================
    # Pipeline Settings
    # Used by: pipeline.py:run_stream()
    # =========================================================================

    @property
    def window_seconds(self) -> float:
        """Buffer window length"""
        return self._section('pipeline').get('window_seconds', 60.0)

    @property
    def variant(self) -> SamplerVariant:
        return SamplerVariant(self._section('pipeline').get('variant', 'full'))

    @property
    def cache_enabled(self) -> bool:
        return self._section('pipeline').get('cache_enabled', True)

    # =========================================================================
    # Evaluation Settings
    # Used by: evaluation.py:build_index()
    # =========================================================================

    @property
    def anomaly_threshold(self) -> float:
        """A trace with anomaly score >= this counts as anomalous"""
        return self._section('evaluation').get('anomaly_threshold', 1.0)

    @property
    def rare_max(self) -> Optional[int]:
        """Rare-pattern cut-off; None means max(1, 0.1% of the corpus)"""
        return self._section('evaluation').get('rare_max')

    # =========================================================================
    # Workload Settings
    # Used by: tail_sampler.py generate
    # =========================================================================

    @property
    def workload_scenario(self) -> str:
        return self._section('workload').get('scenario', 'steady')

    @property
    def workload_seed(self) -> int:
        return self._section('workload').get('seed', 0)

    @property
    def workload_overrides(self) -> Dict[str, Any]:
        """Scenario fields replaced on top of the named preset"""
        return self._section('workload').get('overrides', {})

    # =========================================================================
    # Logging Configuration
    # =========================================================================

    @property
    def log_level(self) -> str:
        """Logging level: DEBUG, INFO, WARNING, ERROR"""
        return self._section('logging').get('level', 'INFO')

    # =========================================================================
    # Typed bundles
    # =========================================================================

    def anomaly_config(self) -> AnomalyConfig:
        return AnomalyConfig(
            w_err=self.w_err,
            w_lw=self.w_lw,
            w_le=self.w_le,
            perf_factor=self.perf_factor,
            perf_score=self.perf_score,
            anomaly_threshold=self.anomaly_threshold,
            min_observations=self.min_observations,
            window_capacity=self.duration_window,
        )

    def allocator_config(self) -> AllocatorConfig:
        return AllocatorConfig(
            base_budget_fraction=self.base_budget_fraction,
            boost_max=self.boost_max,
            boost_cap_fraction=self.boost_cap_fraction,
            drop_threshold=self.drop_threshold,
            scale_max=self.scale_max,
            qpm_history_depth=self.qpm_history_depth,
            qpm_scaling_enabled=self.qpm_scaling_enabled,
        )

    def selector_config(self) -> SelectorConfig:
        return SelectorConfig(epsilon=self.epsilon, cache_capacity=self.cache_capacity)

    def pipeline_settings(self) -> PipelineSettings:
        return PipelineSettings(
            anomaly=self.anomaly_config(),
            allocator=self.allocator_config(),
            selector=self.selector_config(),
            window_seconds=self.window_seconds,
            variant=self.variant,
            cache_enabled=self.cache_enabled,
        )

    # =========================================================================
    # Overrides and Raw Access
    # =========================================================================

    def with_overrides(self, overrides: Mapping[str, Any]) -> 'Config':
        """
        Return a new Config with dotted-key overrides applied

        Args:
            overrides: e.g. {'allocator.base_budget_fraction': 0.01}; None values are skipped

        Raises:
            ConfigError: unknown section or invalid result
        """
        merged = copy.deepcopy(self._config)
        for key, value in overrides.items():
            if value is None:
                continue
            section, _, field_name = key.partition('.')
            if section not in SECTIONS or not field_name:
                raise ConfigError(f"Unknown config key '{key}'")
            merged.setdefault(section, {})[field_name] = value
        validate_config(merged)
        return Config(merged)

    def resolved(self) -> Dict[str, Any]:
        """Every setting with defaults filled in, comments dropped"""
        return {
            'encoder': {
                'w_err': self.w_err, 'w_lw': self.w_lw, 'w_le': self.w_le,
                'perf_factor': self.perf_factor, 'perf_score': self.perf_score,
                'min_observations': self.min_observations, 'window_capacity': self.duration_window,
            },
            'allocator': {
                'base_budget_fraction': self.base_budget_fraction, 'boost_max': self.boost_max,
                'boost_cap_fraction': self.boost_cap_fraction, 'drop_threshold': self.drop_threshold,
                'scale_max': self.scale_max, 'qpm_history_depth': self.qpm_history_depth,
                'qpm_scaling_enabled': self.qpm_scaling_enabled,
            },
            'selector': {'epsilon': self.epsilon, 'cache_capacity': self.cache_capacity},
            'pipeline': {
                'window_seconds': self.window_seconds, 'variant': self.variant.value,
                'cache_enabled': self.cache_enabled,
            },
            'evaluation': {'anomaly_threshold': self.anomaly_threshold, 'rare_max': self.rare_max},
            'workload': {'scenario': self.workload_scenario, 'seed': self.workload_seed,
                         'overrides': self.workload_overrides},
            'logging': {'level': self.log_level},
        }


def default_config_path() -> str:
    return os.path.join(os.path.dirname(os.path.dirname(__file__)), 'config_default.json')


def load_config(config_path: Optional[str] = None) -> Config:
    """
    Load configuration from JSON file

    Args:
        config_path: Path to config file. If None, uses default config;
            when that is missing too, built-in defaults apply.

    Returns:
        Config object with typed access to parameters

    Raises:
        ConfigError: If config file not found or invalid
    """
    if config_path is None:
        config_path = default_config_path()
        if not Path(config_path).exists():
            logger.debug("No config_default.json next to the package; using built-in defaults")
            return Config({})

    config_file = Path(config_path)
    if not config_file.exists():
        raise ConfigError(f"Configuration file not found: {config_path}")

    try:
        with open(config_file, 'r', encoding='utf-8') as f:
            config_dict = json.load(f)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in config file: {e}")
    except UnicodeDecodeError as e:
        raise ConfigError(f"Config file is not UTF-8: {e}")
    except OSError as e:
        raise ConfigError(f"Failed to load config file: {e}")

    validate_config(config_dict)
    return Config(config_dict)


def _strip_comments(section: Dict[str, Any]) -> Dict[str, Any]:
    return {k: v for k, v in section.items() if not k.startswith('_comment') and k != '$schema'}


_NUMBER = (int, float)

_FIELDS: Dict[str, Dict[str, tuple]] = {
    'encoder': {
        'w_err': _NUMBER, 'w_lw': _NUMBER, 'w_le': _NUMBER, 'perf_factor': _NUMBER,
        'perf_score': _NUMBER, 'min_observations': (int,), 'window_capacity': (int,),
    },
    'allocator': {
        'base_budget_fraction': _NUMBER, 'boost_max': _NUMBER, 'boost_cap_fraction': _NUMBER,
        'drop_threshold': _NUMBER, 'scale_max': _NUMBER, 'qpm_history_depth': (int,),
        'qpm_scaling_enabled': (bool,),
    },
    'selector': {'epsilon': _NUMBER, 'cache_capacity': (int,)},
    'pipeline': {'window_seconds': _NUMBER, 'variant': (str,), 'cache_enabled': (bool,)},
    'evaluation': {'anomaly_threshold': _NUMBER, 'rare_max': (int, type(None))},
    'workload': {'scenario': (str,), 'seed': (int,), 'overrides': (dict,)},
    'logging': {'level': (str,)},
}


def validate_config(config: Dict[str, Any]) -> bool:
    """
    Validate configuration structure and value ranges

    Args:
        config: Configuration dictionary

    Returns:
        True if valid

    Raises:
        ConfigError: with a field-level message for the first problem found
    """
    if not isinstance(config, dict):
        raise ConfigError("Configuration root must be a JSON object")

    for section in _strip_comments(config):
        if section not in SECTIONS:
            raise ConfigError(f"Unknown configuration section: {section}")
        values = config[section]
        if not isinstance(values, dict):
            raise ConfigError(f"Section {section} must be an object")
        for name, value in _strip_comments(values).items():
            kinds = _FIELDS[section].get(name)
            if kinds is None:
                raise ConfigError(f"Unknown setting {section}.{name}")
            bool_ok = bool in kinds
            if (isinstance(value, bool) and not bool_ok) or not isinstance(value, kinds):
                raise ConfigError(f"{section}.{name} has wrong type {type(value).__name__}")

    cfg = Config(config)
    # dataclass __post_init__ checks carry the range rules
    cfg.anomaly_config()
    cfg.allocator_config()
    cfg.selector_config()

    problems: List[str] = []
    if cfg.window_seconds <= 0:
        problems.append("pipeline.window_seconds must be > 0")
    try:
        cfg.variant
    except ValueError:
        problems.append(f"pipeline.variant must be one of {[v.value for v in SamplerVariant]}")
    if cfg.anomaly_threshold < 0:
        problems.append("evaluation.anomaly_threshold must be >= 0")
    if cfg.rare_max is not None and cfg.rare_max < 1:
        problems.append("evaluation.rare_max must be >= 1")
    if cfg.log_level.upper() not in LOG_LEVELS:
        problems.append(f"logging.level must be one of {list(LOG_LEVELS)}")
    if problems:
        raise ConfigError(problems[0])
    return True
