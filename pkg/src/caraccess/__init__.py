"""Role-based car access control: identity-based and group signatures, an RBAC
policy engine, protocol engines for the key ceremonies and access procedures,
and a deterministic simulator with a network adversary."""

__version__ = "0.1.0"
