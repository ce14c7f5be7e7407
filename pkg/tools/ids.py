"""ID helpers for run and artifact identifiers (deterministic: derived from content hashes)"""
import hashlib


def _short_hash(text: str, length: int = 8) -> str:
    """Generate short hash from text"""
    return hashlib.sha256(text.encode()).hexdigest()[:length]


def run_id(command: str, config_fingerprint: str) -> str:
    """Generate run ID: RUN::<COMMAND>::<SHORT8 of config>"""
    return f"RUN::{command.upper()}::{_short_hash(f'{command}{config_fingerprint}')}"


def artifact_id(run_id: str, filename: str, sha256: str) -> str:
    """Generate artifact ID: ART::<filename>::<SHORT8>"""
    return f"ART::{filename}::{_short_hash(f'{run_id}{filename}{sha256}')}"
