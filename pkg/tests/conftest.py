import random

import pytest

from rulefuzz.codec import FieldSpec, MessageSchema, SchemaRegistry, builtin_registry


@pytest.fixture(scope="session")
def registry() -> SchemaRegistry:
    return builtin_registry()


@pytest.fixture(scope="session")
def packet_in(registry) -> MessageSchema:
    return registry.by_name("packet_in")


def make_schema(widths, domains=None, type_name="tiny", code=200):
    """Convenience builder for synthetic schemas in tests.

    widths: {name: bits}; domains: {name: (lo, hi)} with raw range default.
    A schema must be byte-aligned, so pick widths accordingly.
    """
    domains = domains or {}
    fields = []
    offset = 0
    for name, width in widths.items():
        lo, hi = domains.get(name, (0, (1 << width) - 1))
        fields.append(FieldSpec(name, offset, width, lo, hi))
        offset += width
    return MessageSchema(type_name, code, offset, tuple(fields))


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)


def random_values(schema, rng, valid=True):
    if valid:
        return {f.name: rng.randint(f.domain_lo, f.domain_hi) for f in schema.fields}
    return {f.name: rng.randrange(f.raw_max + 1) for f in schema.fields}
