"""Trust management for simulated TEE applications.

Attests applications, provisions them with secrets under multi-stakeholder
policies, and protects code and data confidentiality, integrity, and
freshness, including rollback protection for applications and for the
service's own database.
"""

__version__ = "0.1.0"
