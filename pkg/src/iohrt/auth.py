"""Accounts, bearer tokens, and the four-level permission model.

Privilege is a strict ladder: viewer < operator < developer < admin, each
level inheriting everything below it. Passwords are stored only as salted
scrypt digests; login failures return one uniform error for unknown user
and wrong password, and ten consecutive failures lock the username for 60
seconds. Tokens are opaque 256-bit bearer strings with a 24 h lifetime.
"""

from __future__ import annotations

import enum
import hashlib
import hmac
import secrets
import threading
import time
from dataclasses import dataclass

from .store import RecordLog

TOKEN_TTL_S = 24 * 3600.0
LOCKOUT_THRESHOLD = 10
LOCKOUT_SECONDS = 60.0
MIN_PASSWORD_LEN = 8

_SCRYPT_N = 2 ** 14
_SCRYPT_R = 8
_SCRYPT_P = 1


class Role(enum.IntEnum):
    VIEWER = 0
    OPERATOR = 1
    DEVELOPER = 2
    ADMIN = 3

    @classmethod
    def parse(cls, name: str) -> "Role":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown role {name!r}") from None

    def render(self) -> str:
        return self.name.lower()


# Action -> minimum role. Every level implicitly includes all lower rows.
ACTION_MIN_ROLE: dict[str, Role] = {
    "view_devices": Role.VIEWER,
    "view_readings": Role.VIEWER,
    "view_frames": Role.VIEWER,
    "view_missions": Role.VIEWER,
    "view_rules": Role.VIEWER,
    "subscribe_telemetry": Role.VIEWER,
    "logout": Role.VIEWER,
    "acquire_robot": Role.OPERATOR,
    "release_robot": Role.OPERATOR,
    "send_command": Role.OPERATOR,
    "set_goal": Role.OPERATOR,
    "reset_setpoint": Role.OPERATOR,
    "ack_mission": Role.OPERATOR,
    "export_session": Role.OPERATOR,
    "update_rules": Role.DEVELOPER,
    "register_config": Role.DEVELOPER,
    "manage_users": Role.ADMIN,
    "force_release": Role.ADMIN,
}


def role_allows(role: Role, action: str) -> bool:
    """Pure decision matrix; unknown actions are denied."""
    minimum = ACTION_MIN_ROLE.get(action)
    return minimum is not None and role >= minimum


class AuthError(Exception):
    pass


class UnauthenticatedError(AuthError):
    """Missing, unknown, or expired token (HTTP 401)."""


class ForbiddenError(AuthError):
    """Valid token, insufficient role (HTTP 403)."""


class InvalidCredentialsError(AuthError):
    """Uniform login failure; never distinguishes user-vs-password."""


class LockedOutError(AuthError):
    """Too many consecutive failures; retry after the lockout window."""


class DuplicateUserError(AuthError):
    pass


@dataclass(frozen=True)
class UserRecord:
    username: str
    pass_hash: str  # "scrypt$<salt hex>$<digest hex>"
    role: Role
    created_ms: int


@dataclass(frozen=True)
class Token:
    value: str
    username: str
    role: Role
    session_id: str  # public identifier safe to log and to hold robot locks
    expires_ms: int


def _hash_password(password: str, salt: bytes) -> str:
    digest = hashlib.scrypt(
        password.encode("utf-8"), salt=salt,
        n=_SCRYPT_N, r=_SCRYPT_R, p=_SCRYPT_P,
    )
    return f"scrypt${salt.hex()}${digest.hex()}"


def _verify_password(password: str, stored: str) -> bool:
    try:
        scheme, salt_hex, digest_hex = stored.split("$")
        if scheme != "scrypt":
            return False
        recomputed = _hash_password(password, bytes.fromhex(salt_hex))
    except (ValueError, TypeError):
        return False
    return hmac.compare_digest(recomputed.split("$")[2], digest_hex)


@dataclass
class _LoginState:
    failures: int = 0
    locked_until: float = 0.0


class AuthService:
    """User table, token table, and permission checks.

    ``users_log`` (optional) persists accounts as append-only records:
    the latest record per username wins, so role changes append rather
    than rewrite. ``clock`` is injectable for tests.
    """

    def __init__(
        self,
        users_log: RecordLog | None = None,
        clock=time.time,
        token_ttl_s: float = TOKEN_TTL_S,
    ):
        self._clock = clock
        self._token_ttl_s = token_ttl_s
        self._lock = threading.Lock()
        self._users: dict[str, UserRecord] = {}
        self._tokens: dict[str, Token] = {}
        self._login_state: dict[str, _LoginState] = {}
        self._log = users_log
        if users_log is not None:
            for rec in users_log.records():
                self._users[rec["username"]] = UserRecord(
                    username=rec["username"],
                    pass_hash=rec["pass_hash"],
                    role=Role.parse(rec["role"]),
                    created_ms=rec["created_ms"],
                )

    def _now_ms(self) -> int:
        return int(self._clock() * 1000)

    # Accounts

    def bootstrap_user(self, username: str, password: str, role: Role) -> UserRecord:
        """Seed an account from config without an admin caller (first boot)."""
        with self._lock:
            existing = self._users.get(username)
            if existing is not None:
                return existing
            return self._create_locked(username, password, role)

    def create_user(
        self, admin_token: str, username: str, password: str, role: Role
    ) -> UserRecord:
        self.authorize(admin_token, "manage_users")
        with self._lock:
            if username in self._users:
                raise DuplicateUserError(f"username {username!r} taken")
            return self._create_locked(username, password, role)

    def _create_locked(self, username: str, password: str, role: Role) -> UserRecord:
        if not (3 <= len(username) <= 32):
            raise ValueError("username must be 3-32 characters")
        if len(password) < MIN_PASSWORD_LEN:
            raise ValueError(f"password must be >= {MIN_PASSWORD_LEN} characters")
        record = UserRecord(
            username=username,
            pass_hash=_hash_password(password, secrets.token_bytes(16)),
            role=role,
            created_ms=self._now_ms(),
        )
        self._persist(record)
        self._users[username] = record
        return record

    def set_role(self, admin_token: str, username: str, role: Role) -> UserRecord:
        self.authorize(admin_token, "manage_users")
        return self.force_role(username, role)

    def has_user(self, username: str) -> bool:
        with self._lock:
            return username in self._users

    def force_role(self, username: str, role: Role) -> UserRecord:
        """Change a role without an admin token. For local store
        administration (CLI on the gateway host); the HTTP path always goes
        through ``set_role``."""
        with self._lock:
            existing = self._users.get(username)
            if existing is None:
                raise KeyError(f"unknown user {username!r}")
            record = UserRecord(
                username=existing.username,
                pass_hash=existing.pass_hash,
                role=role,
                created_ms=existing.created_ms,
            )
            self._persist(record)
            self._users[username] = record
            # Live sessions keep their issued role until re-login.
            return record

    def _persist(self, record: UserRecord) -> None:
        if self._log is not None:
            self._log.append({
                "username": record.username,
                "pass_hash": record.pass_hash,
                "role": record.role.render(),
                "created_ms": record.created_ms,
            })

    def list_users(self) -> list[UserRecord]:
        with self._lock:
            return list(self._users.values())

    # Login / tokens

    def authenticate(self, username: str, password: str) -> Token:
        now = self._clock()
        with self._lock:
            state = self._login_state.setdefault(str(username), _LoginState())
            if state.locked_until > now:
                raise LockedOutError(
                    f"locked out for {state.locked_until - now:.0f} more seconds"
                )
            if state.locked_until:
                state.failures = 0
                state.locked_until = 0.0
            user = self._users.get(username)
            ok = user is not None and _verify_password(password, user.pass_hash)
            if not ok:
                state.failures += 1
                if state.failures >= LOCKOUT_THRESHOLD:
                    state.locked_until = now + LOCKOUT_SECONDS
                raise InvalidCredentialsError("invalid username or password")
            state.failures = 0
            token = Token(
                value=secrets.token_urlsafe(32),
                username=user.username,
                role=user.role,
                session_id=secrets.token_hex(8),
                expires_ms=int((now + self._token_ttl_s) * 1000),
            )
            self._tokens[token.value] = token
            return token

    def resolve(self, token_value: str | None) -> Token:
        """Map a bearer string to its live token or raise UnauthenticatedError."""
        if not token_value:
            raise UnauthenticatedError("missing token")
        with self._lock:
            token = self._tokens.get(token_value)
            if token is None:
                raise UnauthenticatedError("unknown token")
            if token.expires_ms <= self._now_ms():
                del self._tokens[token_value]
                raise UnauthenticatedError("expired token")
            return token

    def revoke(self, token_value: str) -> None:
        with self._lock:
            self._tokens.pop(token_value, None)

    def authorize(
        self, token_value: str | None, action: str, resource: str | None = None
    ) -> Token:
        """Resolve the token and check the role matrix; raises on deny."""
        token = self.resolve(token_value)
        if not role_allows(token.role, action):
            raise ForbiddenError(
                f"role {token.role.render()} may not {action}"
                + (f" on {resource}" if resource else "")
            )
        return token
