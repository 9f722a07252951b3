"""Non-abelian attenuated X-ray transforms on simple surfaces."""
