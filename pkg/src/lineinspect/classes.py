"""Shared class-id catalog for the six part classes (3 disc + 3 calliper types)."""

from .errors import ValidationError

PART_TYPES = (1, 2, 3)

CLASS_NAMES = ("disc1", "disc2", "disc3", "calliper1", "calliper2", "calliper3")
NUM_CLASSES = len(CLASS_NAMES)

DISC_CLASS_IDS = (0, 1, 2)
CALLIPER_CLASS_IDS = (3, 4, 5)


def disc_class(type_id: int) -> int:
    if type_id not in PART_TYPES:
        raise ValidationError(f"disc type must be one of {PART_TYPES}, got {type_id}")
    return type_id - 1


def calliper_class(type_id: int) -> int:
    if type_id not in PART_TYPES:
        raise ValidationError(f"calliper type must be one of {PART_TYPES}, got {type_id}")
    return 3 + type_id - 1


def class_kind(class_id: int) -> str:
    if class_id in DISC_CLASS_IDS:
        return "disc"
    if class_id in CALLIPER_CLASS_IDS:
        return "calliper"
    raise ValidationError(f"unknown class id {class_id}")


def class_type(class_id: int) -> int:
    return class_id + 1 if class_id in DISC_CLASS_IDS else class_id - 2
