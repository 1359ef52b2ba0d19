"""Predefined special tokens and subtokens."""

PAD = "[PAD]"
SEX_FEMALE = "[F]"
SEX_MALE = "[M]"
SEX_AMBIGUOUS = "[A]"
SEX_UNKNOWN = "[U]"
SEX_NOT_APPLICABLE = "[N]"
SEX_OTHER = "[O]"
ADMISSION = "[ADM]"
DISCHARGE = "[DSC]"
DISCHARGE_ALIVE = "[DSC_ALV]"
DISCHARGE_EXPIRED = "[DSC_EXP]"
END_OF_TIMELINE = "[EOT]"
RESULT_POSITIVE = "[POS]"
RESULT_NEGATIVE = "[NEG]"
RESULT_EQUIVOCAL = "[N/P]"

# Fixed id order for the special vocabulary group.
SPECIAL_TOKENS = [
    PAD,
    SEX_FEMALE,
    SEX_MALE,
    SEX_AMBIGUOUS,
    SEX_UNKNOWN,
    SEX_NOT_APPLICABLE,
    SEX_OTHER,
    ADMISSION,
    DISCHARGE,
    DISCHARGE_ALIVE,
    DISCHARGE_EXPIRED,
    END_OF_TIMELINE,
    RESULT_POSITIVE,
    RESULT_NEGATIVE,
    RESULT_EQUIVOCAL,
]

SEX_TOKENS = {SEX_FEMALE, SEX_MALE, SEX_AMBIGUOUS, SEX_UNKNOWN, SEX_NOT_APPLICABLE, SEX_OTHER}
DISPOSITION_TOKENS = {DISCHARGE_ALIVE, DISCHARGE_EXPIRED}

# Record-kind subtokens (embedding entries, not vocabulary entries).
SUB_DIAGNOSIS = "[DX]"
SUB_MEDICATION = "[MED]"
SUB_LAB = "[LAB]"
SUB_PROVISIONAL = "[PRV]"

# Canonical nonnumeric result strings mapped to special result tokens.
RESULT_TOKEN_BY_VALUE = {
    "(+)": RESULT_POSITIVE,
    "(-)": RESULT_NEGATIVE,
    "(+/-)": RESULT_EQUIVOCAL,
}
RESULT_VALUE_BY_TOKEN = {v: k for k, v in RESULT_TOKEN_BY_VALUE.items()}
