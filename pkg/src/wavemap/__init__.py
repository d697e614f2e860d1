"""Critical phenomena toolkit for equivariant wave maps into S^3."""
