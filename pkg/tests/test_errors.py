import pytest

from orthoforge import errors


@pytest.mark.parametrize('error, category, code', [
    (errors.UsageError('x'), 'usage', 2),
    (errors.ArtifactIOError('x'), 'io', 3),
    (errors.TruncatedBodyError('x', 10, 4), 'io', 3),
    (errors.FormatError('x'), 'format', 4),
    (errors.PlyParseError('x', 3), 'format', 4),
    (errors.SchemaError('x'), 'schema', 4),
    (errors.ConfigError('x'), 'config', 4),
    (errors.DegenerateGeometryError('x'), 'degenerate-geometry', 5),
    (errors.NoPlaneError('x'), 'no-plane', 5),
    (errors.DomainError('x'), 'domain', 6),
    (errors.NormalizationError('x'), 'normalization', 6),
])
def test_categories_and_exit_codes(error, category, code):
    assert isinstance(error, errors.OrthoforgeError)
    assert error.category == category
    assert error.exit_code == code


def test_truncation_reports_byte_counts():
    error = errors.TruncatedBodyError('short body', 120, 96)
    assert (error.expected, error.actual) == (120, 96)
    assert 'expected 120 bytes, got 96' in str(error)


def test_ply_parse_error_names_the_line():
    error = errors.PlyParseError('bad property', 7)
    assert error.line == 7
    assert str(error).startswith('line 7:')
