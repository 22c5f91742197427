"""Mean-field-game solver for exhaustible-resource market competition."""
