"""Schema-allowlist validation of donor metadata.

Every accepted value is drawn from a closed vocabulary, so nothing that
reaches the store can carry free text. All problems are collected and
returned together rather than raised one at a time.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field

AGE_BUCKETS = tuple(f"{lo}-{lo + 9}" for lo in range(0, 90, 10)) + ("90+",)
GENDERS = ("female", "male", "other", "undisclosed")
# ISO 639-1 codes accepted for the language spoken in the recording
LANGUAGES = (
    "ar", "bn", "ca", "cs", "da", "de", "el", "en", "es", "eu", "fa", "fi", "fr", "gl", "he",
    "hi", "hu", "id", "it", "ja", "ko", "ms", "nl", "no", "pa", "pl", "pt", "ro", "ru", "sv",
    "sw", "ta", "th", "tr", "uk", "ur", "vi", "zh", "other",
)
COMORBIDITIES = ("cardiovascular", "pulmonary", "diabetes", "hypertension", "other")
# ATC anatomical main groups
MEDICATION_CODES = ("A", "B", "C", "D", "G", "H", "J", "L", "M", "N", "P", "R", "S", "V")
TEST_RESULTS = ("positive", "negative", "pending", "absent")
TREATMENTS = ("antiviral", "antibiotic", "corticosteroid", "anticoagulant", "immunomodulator",
              "oxygen", "mechanical_ventilation", "other")
MAX_DAYS_SINCE_ONSET = 365
PSEUDONYM_RE = re.compile(r"^[0-9a-f]{32}$")

REQUIRED = ("age_bucket", "gender", "mother_tongue", "region")
OPTIONAL = ("days_since_onset", "comorbidities", "concomitant_medication", "clinical", "donor_pseudonym")
CLINICAL_KEYS = ("rt_pcr", "serology", "thorax_rx_available", "ct_available", "icu_admission", "treatment")
RAW_AGE_KEYS = ("age", "age_years", "birth_year", "date_of_birth", "dob")


@dataclass(frozen=True)
class Violation:
    code: str
    field: str
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ClinicalInfo:
    rt_pcr: str = "absent"
    serology: str = "absent"
    thorax_rx_available: bool = False
    ct_available: bool = False
    icu_admission: bool = False
    treatment: list = field(default_factory=list)


@dataclass
class SampleMetadata:
    age_bucket: str
    gender: str
    mother_tongue: str
    region: str
    days_since_onset: int | None = None
    comorbidities: list = field(default_factory=list)
    concomitant_medication: list = field(default_factory=list)
    clinical: ClinicalInfo | None = None
    donor_pseudonym: str | None = None

    def to_dict(self) -> dict:
        """Canonical form: every schema key present, lists sorted."""
        return asdict(self)


def _raw_age_violation(key: str, value) -> Violation:
    try:
        years = float(value)
    except (TypeError, ValueError):
        years = None
    if key in ("age", "age_years") and years is not None and years > 89:
        return Violation("AgeAbove89MustBeBucketed", key,
                         "ages above 89 may only be reported as the '90+' bucket")
    return Violation("RawAgeMustBeBucketed", key, "report age as age_bucket only")


def _enum(value, allowed, name, out: list, code="InvalidEnumValue"):
    if isinstance(value, str) and value in allowed:
        return value
    if isinstance(value, str) and value not in allowed:
        out.append(Violation(code if len(value) <= 32 else "FreeTextValue", name,
                             f"value not in the allowed vocabulary of {len(allowed)} entries"))
    else:
        out.append(Violation("InvalidType", name, "expected a string"))
    return None


def _enum_list(value, allowed, name, out: list):
    if not isinstance(value, list):
        out.append(Violation("InvalidType", name, "expected a list"))
        return []
    items = [_enum(v, allowed, name, out) for v in value]
    return sorted({v for v in items if v is not None})


def _flag(value, name, out: list):
    if isinstance(value, bool):
        return value
    out.append(Violation("InvalidType", name, "expected true or false"))
    return False


def validate_deidentification(raw, region_allowlist) -> tuple[SampleMetadata | None, list]:
    """Return (metadata, []) for a clean submission or (None, violations)."""
    v: list = []
    if not isinstance(raw, dict):
        return None, [Violation("InvalidType", "", "metadata must be a JSON object")]
    allowed_keys = set(REQUIRED) | set(OPTIONAL)
    for key in sorted(raw):
        if key in allowed_keys:
            continue
        if key in RAW_AGE_KEYS:
            v.append(_raw_age_violation(key, raw[key]))
        else:
            v.append(Violation("UnknownIdentifyingField", str(key), "field is not part of the sample schema"))
    for key in REQUIRED:
        if key not in raw:
            v.append(Violation("MissingRequiredField", key))

    age = _enum(raw["age_bucket"], AGE_BUCKETS, "age_bucket", v) if "age_bucket" in raw else None
    gender = _enum(raw["gender"], GENDERS, "gender", v) if "gender" in raw else None
    tongue = _enum(raw["mother_tongue"], LANGUAGES, "mother_tongue", v) if "mother_tongue" in raw else None
    region = None
    if "region" in raw:
        region = _enum(raw["region"], frozenset(region_allowlist), "region", v, code="RegionNotAllowed")

    days = raw.get("days_since_onset")
    if days is not None and (isinstance(days, bool) or not isinstance(days, int)
                             or not 0 <= days <= MAX_DAYS_SINCE_ONSET):
        v.append(Violation("InvalidValue", "days_since_onset",
                           f"expected an integer in 0..{MAX_DAYS_SINCE_ONSET}"))
        days = None

    comorb = _enum_list(raw.get("comorbidities", []), COMORBIDITIES, "comorbidities", v)
    meds = _enum_list(raw.get("concomitant_medication", []), MEDICATION_CODES, "concomitant_medication", v)

    clinical = None
    if raw.get("clinical") is not None:
        c = raw["clinical"]
        if not isinstance(c, dict):
            v.append(Violation("InvalidType", "clinical", "expected an object"))
        else:
            for key in sorted(set(c) - set(CLINICAL_KEYS)):
                v.append(Violation("UnknownIdentifyingField", f"clinical.{key}",
                                   "field is not part of the sample schema"))
            clinical = ClinicalInfo(
                rt_pcr=_enum(c.get("rt_pcr", "absent"), TEST_RESULTS, "clinical.rt_pcr", v),
                serology=_enum(c.get("serology", "absent"), TEST_RESULTS, "clinical.serology", v),
                thorax_rx_available=_flag(c.get("thorax_rx_available", False), "clinical.thorax_rx_available", v),
                ct_available=_flag(c.get("ct_available", False), "clinical.ct_available", v),
                icu_admission=_flag(c.get("icu_admission", False), "clinical.icu_admission", v),
                treatment=_enum_list(c.get("treatment", []), TREATMENTS, "clinical.treatment", v),
            )

    pseudonym = raw.get("donor_pseudonym")
    if pseudonym is not None and not (isinstance(pseudonym, str) and PSEUDONYM_RE.match(pseudonym)):
        v.append(Violation("InvalidPseudonym", "donor_pseudonym", "expected 32 lowercase hex characters"))

    if v:
        return None, v
    return SampleMetadata(age, gender, tongue, region, days, comorb, meds, clinical, pseudonym), []


def metadata_from_dict(d: dict) -> SampleMetadata:
    """Rebuild stored (already validated) metadata."""
    d = dict(d)
    if d.get("clinical") is not None:
        d["clinical"] = ClinicalInfo(**d["clinical"])
    return SampleMetadata(**d)
