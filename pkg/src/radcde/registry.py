"""Common Data Element registry: catalog loading, validation, and lookups.

The registry binds human-readable feature names (e.g. "Presence_Pleural_Effusion")
to CDE identifiers with controlled value sets, groups features into retrieval
classes, and carries the annotated exemplar corpus used by the extraction
pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources

from .errors import DuplicateIdError, FeatureNotFoundError, RegistryError

UNSPECIFIED = "unspecified"
NUMERIC_DEFAULT = 0.0


class CdeKind(str, Enum):
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"


@dataclass(frozen=True)
class CdeValue:
    value_code: str
    label: str
    description: str = ""


@dataclass(frozen=True)
class CdeDefinition:
    cde_id: str
    display_name: str
    feature_name: str
    cde_set_id: str
    cde_set_name: str
    kind: CdeKind
    description: str = ""
    aliases: tuple[str, ...] = ()
    value_set: tuple[CdeValue, ...] = ()
    unit: str | None = None
    bounds: tuple[float, float] | None = None
    default: str | float = UNSPECIFIED
    aggregate: str | None = None  # numeric aggregation rule ("max") or None

    def value_by_label(self, label: str) -> CdeValue | None:
        for value in self.value_set:
            if value.label == label:
                return value
        return None

    def value_by_code(self, code: str) -> CdeValue | None:
        for value in self.value_set:
            if value.value_code == code:
                return value
        return None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(v.label for v in self.value_set)

    @property
    def is_presence_like(self) -> bool:
        """True when every permitted value is a presence verdict."""
        presence = {"present", "absent", UNSPECIFIED, "indeterminant", "single", "multiple"}
        return self.kind is CdeKind.CATEGORICAL and set(self.labels) <= presence


@dataclass(frozen=True)
class FeatureClass:
    class_id: str
    name: str
    member_features: tuple[str, ...]
    core_terms: tuple[str, ...] = ()
    type_values: tuple[tuple[str, str], ...] = ()  # (value label, cde_id)


@dataclass
class AnnotatedExample:
    sentence: str
    feature_values: dict[str, str]
    source: str = "human"  # "human" | "augmented"


class CdeRegistry:
    """Immutable view over the validated CDE catalog."""

    def __init__(
        self,
        cdes: list[CdeDefinition],
        feature_classes: list[FeatureClass],
        exemplars: list[AnnotatedExample],
        version: str = "0",
    ):
        self.cdes = tuple(cdes)
        self.feature_classes = tuple(feature_classes)
        self.exemplars = tuple(exemplars)
        self.version = version
        self._by_id: dict[str, CdeDefinition] = {}
        self._by_feature: dict[str, CdeDefinition] = {}
        self._class_by_feature: dict[str, FeatureClass] = {}
        self._validate()

    # -- construction ------------------------------------------------------

    def _validate(self) -> None:
        for cde in self.cdes:
            if cde.cde_id in self._by_id:
                raise DuplicateIdError(f"duplicate cde_id {cde.cde_id}")
            self._by_id[cde.cde_id] = cde
            for name in (cde.feature_name, *cde.aliases):
                if name in self._by_feature:
                    raise DuplicateIdError(f"duplicate feature name {name}")
                self._by_feature[name] = cde
            self._validate_cde(cde)

        claimed: dict[str, str] = {}
        for fclass in self.feature_classes:
            for feature in fclass.member_features:
                if feature not in self._by_feature:
                    raise RegistryError(
                        f"class {fclass.name} references unknown feature {feature}"
                    )
                if feature in claimed:
                    raise RegistryError(
                        f"feature {feature} claimed by both {claimed[feature]} and {fclass.name}"
                    )
                claimed[feature] = fclass.name
                self._class_by_feature[feature] = fclass
            for label, cde_id in fclass.type_values:
                if cde_id not in self._by_id:
                    raise RegistryError(
                        f"class {fclass.name} type value {label} references unknown {cde_id}"
                    )
        unclaimed = [c.feature_name for c in self.cdes if c.feature_name not in claimed]
        if unclaimed:
            raise RegistryError(f"features not covered by any class: {unclaimed}")

        for example in self.exemplars:
            self._validate_example(example)

    def _validate_cde(self, cde: CdeDefinition) -> None:
        if cde.kind is CdeKind.CATEGORICAL:
            if not cde.value_set:
                raise RegistryError(f"{cde.cde_id} has an empty value set")
            codes = [v.value_code for v in cde.value_set]
            if len(set(codes)) != len(codes):
                raise DuplicateIdError(f"duplicate value codes in {cde.cde_id}")
            if UNSPECIFIED not in cde.labels:
                raise RegistryError(f"{cde.cde_id} lacks an '{UNSPECIFIED}' value")
            if cde.value_by_code(str(cde.default)) is None:
                raise RegistryError(f"{cde.cde_id} default {cde.default} not in value set")
        else:
            if cde.unit is None or cde.bounds is None:
                raise RegistryError(f"numeric {cde.cde_id} needs unit and bounds")
            lo, hi = cde.bounds
            if not lo < hi:
                raise RegistryError(f"{cde.cde_id} bounds are not an interval")
            if not lo <= float(cde.default) <= hi:
                raise RegistryError(f"{cde.cde_id} default outside bounds")

    def _validate_example(self, example: AnnotatedExample) -> None:
        if not example.sentence.strip():
            raise RegistryError("exemplar with empty sentence")
        for feature, value in example.feature_values.items():
            cde = self._by_feature.get(feature)
            if cde is None:
                raise RegistryError(f"exemplar references unknown feature {feature}")
            if cde.kind is CdeKind.CATEGORICAL:
                if cde.value_by_label(value) is None:
                    raise RegistryError(
                        f"exemplar value {value!r} not permitted for {feature}"
                    )
            elif value != UNSPECIFIED and parse_numeric_annotation(value) is None:
                raise RegistryError(
                    f"exemplar numeric value {value!r} unparseable for {feature}"
                )

    # -- queries -----------------------------------------------------------

    def get(self, cde_id: str) -> CdeDefinition:
        try:
            return self._by_id[cde_id]
        except KeyError:
            raise FeatureNotFoundError(f"unknown cde_id {cde_id}") from None

    def lookup_feature(self, feature_name: str) -> CdeDefinition:
        try:
            return self._by_feature[feature_name]
        except KeyError:
            raise FeatureNotFoundError(f"unknown feature {feature_name!r}") from None

    def class_of_feature(self, feature_name: str) -> FeatureClass:
        cde = self.lookup_feature(feature_name)
        return self._class_by_feature[cde.feature_name]

    def class_by_name(self, name: str) -> FeatureClass:
        for fclass in self.feature_classes:
            if fclass.name == name or fclass.class_id == name:
                return fclass
        raise FeatureNotFoundError(f"unknown feature class {name!r}")

    @property
    def feature_names(self) -> tuple[str, ...]:
        return tuple(c.feature_name for c in self.cdes)

    def human_exemplars(self) -> list[AnnotatedExample]:
        return [e for e in self.exemplars if e.source == "human"]


def parse_numeric_annotation(value: str) -> tuple[float, str | None] | None:
    """Parse '3.0 mm' / '12' style annotation strings; None when unparseable."""
    parts = value.strip().split()
    if not parts or len(parts) > 2:
        return None
    try:
        number = float(parts[0])
    except ValueError:
        return None
    return number, parts[1] if len(parts) == 2 else None


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _cde_from_dict(payload: dict) -> CdeDefinition:
    kind = CdeKind(payload["kind"])
    values = tuple(
        CdeValue(v["value_code"], v["label"], v.get("description", ""))
        for v in payload.get("value_set", ())
    )
    bounds = payload.get("bounds")
    return CdeDefinition(
        cde_id=payload["cde_id"],
        display_name=payload["display_name"],
        feature_name=payload["feature_name"],
        cde_set_id=payload["cde_set_id"],
        cde_set_name=payload["cde_set_name"],
        kind=kind,
        description=payload.get("description", ""),
        aliases=tuple(payload.get("aliases", ())),
        value_set=values,
        unit=payload.get("unit"),
        bounds=tuple(bounds) if bounds else None,
        default=payload["default"],
        aggregate=payload.get("aggregate"),
    )


def load_registry(path: str | None = None) -> CdeRegistry:
    """Load and validate a registry JSON file; None loads the packaged catalog."""
    if path is None:
        text = resources.files("radcde.data").joinpath("chest_xr_registry.json").read_text("utf-8")
    else:
        try:
            with open(path, encoding="utf-8") as handle:
                text = handle.read()
        except OSError as exc:
            raise RegistryError(f"cannot read registry file {path}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegistryError(f"registry is not valid JSON: {exc}") from exc

    try:
        cdes = [_cde_from_dict(entry) for entry in payload["cdes"]]
        classes = [
            FeatureClass(
                class_id=entry["class_id"],
                name=entry["name"],
                member_features=tuple(entry["member_features"]),
                core_terms=tuple(entry.get("core_terms", ())),
                type_values=tuple(
                    (tv["value"], tv["cde_id"]) for tv in entry.get("type_values", ())
                ),
            )
            for entry in payload["feature_classes"]
        ]
        exemplars = [
            AnnotatedExample(
                sentence=entry["sentence"],
                feature_values=dict(entry["feature_values"]),
                source=entry.get("source", "human"),
            )
            for entry in payload["exemplars"]
        ]
    except (KeyError, TypeError) as exc:
        raise RegistryError(f"registry schema violation: {exc}") from exc

    return CdeRegistry(cdes, classes, exemplars, version=str(payload.get("version", "0")))


def serialize_registry(registry: CdeRegistry) -> dict:
    """Inverse of load_registry, modulo JSON key order."""
    cdes = []
    for cde in registry.cdes:
        entry: dict = {
            "cde_id": cde.cde_id,
            "display_name": cde.display_name,
            "feature_name": cde.feature_name,
            "aliases": list(cde.aliases),
            "cde_set_id": cde.cde_set_id,
            "cde_set_name": cde.cde_set_name,
            "kind": cde.kind.value,
            "description": cde.description,
            "default": cde.default,
        }
        if cde.kind is CdeKind.CATEGORICAL:
            entry["value_set"] = [
                {"value_code": v.value_code, "label": v.label, "description": v.description}
                for v in cde.value_set
            ]
        else:
            entry["unit"] = cde.unit
            entry["bounds"] = list(cde.bounds or ())
            if cde.aggregate:
                entry["aggregate"] = cde.aggregate
        cdes.append(entry)
    return {
        "version": registry.version,
        "cdes": cdes,
        "feature_classes": [
            {
                "class_id": f.class_id,
                "name": f.name,
                "member_features": list(f.member_features),
                "core_terms": list(f.core_terms),
                "type_values": [{"value": label, "cde_id": cde_id} for label, cde_id in f.type_values],
            }
            for f in registry.feature_classes
        ],
        "exemplars": [
            {
                "sentence": e.sentence,
                "feature_values": dict(e.feature_values),
                "source": e.source,
            }
            for e in registry.exemplars
        ],
    }


def default_record(registry: CdeRegistry) -> dict[str, str | float]:
    """Map cde_id to its default: the 'unspecified' value_code, or 0.0 for numerics."""
    record: dict[str, str | float] = {}
    for cde in registry.cdes:
        if cde.kind is CdeKind.CATEGORICAL:
            record[cde.cde_id] = str(cde.default)
        else:
            record[cde.cde_id] = float(cde.default)
    return record


def default_extractions(registry: CdeRegistry) -> dict[str, str | float]:
    """Feature-name-keyed defaults: 'unspecified' labels and 0.0 numerics."""
    record: dict[str, str | float] = {}
    for cde in registry.cdes:
        if cde.kind is CdeKind.CATEGORICAL:
            value = cde.value_by_code(str(cde.default))
            record[cde.feature_name] = value.label if value else UNSPECIFIED
        else:
            record[cde.feature_name] = float(cde.default)
    return record
