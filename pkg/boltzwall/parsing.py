
def parse_bool(value, name):
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"Could not parse value of '{name}' (must be boolean): {value}")


def parse_validate_float(value, name):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ValueError(f"Could not parse value of '{name}' (must be float): {value}")


def parse_validate_positive_float(value, name):
    parsed = parse_validate_float(value, name)
    if parsed <= 0:
        raise ValueError(f"Value of '{name}' must be positive: {value}")
    return parsed


def parse_validate_positive_int(value, name):
    try:
        parsed = int(value)
    except (TypeError, ValueError):
        raise ValueError(f"Could not parse value of '{name}' (must be int): {value}")
    if parsed < 1:
        raise ValueError(f"Value of '{name}' must be at least 1: {value}")
    return parsed


def parse_float_list(value, name):
    """
    Parse a comma separated list of floats, e.g. "0.005, 0.01, 0.02".
    """
    items = [item.strip() for item in str(value).split(",") if item.strip()]
    if not items:
        raise ValueError(f"Value of '{name}' must list at least one number: {value}")
    return tuple(parse_validate_float(item, name) for item in items)
