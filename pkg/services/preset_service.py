import copy
from typing import Any, Dict, List, Optional

from data.presets import PRESET_DATABASE
from models.config import ExperimentConfig
from utils.errors import ConfigurationError


class PresetService:
    def __init__(self):
        self.presets = PRESET_DATABASE

    def get_all_presets(self) -> List[Dict[str, Any]]:
        """Name, category and description of every preset"""
        return [
            {key: preset[key] for key in ("name", "category", "description")}
            for preset in self.presets
        ]

    def get_preset_by_name(self, name: str) -> Optional[Dict[str, Any]]:
        for preset in self.presets:
            if preset['name'].lower() == name.lower():
                return preset
        return None

    def get_presets_by_category(self, category: str) -> List[Dict[str, Any]]:
        return [p for p in self.presets if p.get('category', '').lower() == category.lower()]

    def build_config(self, name: str) -> ExperimentConfig:
        """Validated ExperimentConfig for a preset"""
        preset = self.get_preset_by_name(name)
        if preset is None:
            known = ", ".join(p['name'] for p in self.presets)
            raise ConfigurationError(f"unknown preset '{name}' (known: {known})")
        return ExperimentConfig.model_validate(copy.deepcopy(preset['config']))
