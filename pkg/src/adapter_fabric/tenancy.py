"""Users, projects, roles, adapter grants, and the API-key lifecycle.

All mutating operations serialize on a single lock; reads work on
point-in-time copies so callers never observe partial updates.
"""

from __future__ import annotations

import base64
import hashlib
import secrets
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .errors import FabricError

ROLE_MEMBER = "MEMBER"
ROLE_ADMIN = "ADMIN"
ROLE_OWNER = "OWNER"
ROLES = (ROLE_MEMBER, ROLE_ADMIN, ROLE_OWNER)
_ROLE_RANK = {ROLE_MEMBER: 0, ROLE_ADMIN: 1, ROLE_OWNER: 2}

SCOPE_USER = "USER"
SCOPE_PROJECT = "PROJECT"

KEY_ACTIVE = "ACTIVE"
KEY_REVOKED = "REVOKED"

TOKEN_PREFIX = "lf-"


def now_ms() -> int:
    return int(time.time() * 1000)


def _new_id(prefix: str) -> str:
    return f"{prefix}-{uuid.uuid4().hex[:12]}"


def hash_token(raw_token: str) -> str:
    """SHA-256 hex digest of the full raw token string."""
    return hashlib.sha256(raw_token.encode("utf-8")).hexdigest()


def generate_token() -> str:
    """New raw API token: "lf-" + 43 chars of unpadded URL-safe base64 over 32 random bytes."""
    raw = base64.urlsafe_b64encode(secrets.token_bytes(32)).decode("ascii").rstrip("=")
    return TOKEN_PREFIX + raw


@dataclass(frozen=True)
class User:
    id: str
    display_name: str
    created_at: int


@dataclass(frozen=True)
class KeyScope:
    """Either USER(user_id) or PROJECT(project_id)."""

    kind: str
    subject_id: str

    @staticmethod
    def user(user_id: str) -> "KeyScope":
        return KeyScope(SCOPE_USER, user_id)

    @staticmethod
    def project(project_id: str) -> "KeyScope":
        return KeyScope(SCOPE_PROJECT, project_id)


@dataclass(frozen=True)
class RateLimit:
    capacity: int = 60
    refill_per_minute: int = 60


@dataclass(frozen=True)
class Project:
    id: str
    name: str
    owner: str
    members: dict[str, str]  # user_id -> role
    adapter_grants: frozenset[str]
    created_at: int


@dataclass(frozen=True)
class ApiKey:
    id: str
    token_digest: str
    scope: KeyScope
    status: str = KEY_ACTIVE
    created_at: int = 0
    revoked_at: Optional[int] = None
    rate_limit: RateLimit = field(default_factory=RateLimit)


@dataclass(frozen=True)
class Principal:
    """Authenticated identity resolved from an ACTIVE key."""

    key_id: str
    scope: KeyScope


class TenancyStore:
    """Linearizable store of users, projects, and API keys.

    ``adapter_lookup`` is injected at wiring time and maps an adapter id to
    an object with ``visibility`` and ``id`` attributes (or None if
    unregistered); it keeps this module decoupled from the catalog.
    """

    def __init__(self, adapter_lookup: Optional[Callable[[str], object]] = None):
        self._lock = threading.RLock()
        self._users: dict[str, User] = {}
        self._projects: dict[str, Project] = {}
        self._keys: dict[str, ApiKey] = {}
        self._digest_index: dict[str, str] = {}  # token_digest -> key_id
        self._adapter_lookup = adapter_lookup

    def set_adapter_lookup(self, lookup: Callable[[str], object]) -> None:
        self._adapter_lookup = lookup

    # -- users ------------------------------------------------------------

    def create_user(self, display_name: str, user_id: Optional[str] = None) -> User:
        with self._lock:
            uid = user_id or _new_id("u")
            if uid in self._users:
                raise FabricError("DUPLICATE_ID", f"user {uid!r} already exists")
            user = User(id=uid, display_name=display_name, created_at=now_ms())
            self._users[uid] = user
            return user

    def get_user(self, user_id: str) -> User:
        user = self._users.get(user_id)
        if user is None:
            raise FabricError("UNKNOWN_USER", f"no user {user_id!r}")
        return user

    def list_users(self) -> list[User]:
        with self._lock:
            return sorted(self._users.values(), key=lambda u: u.id)

    # -- projects ----------------------------------------------------------

    def create_project(self, owner: str, name: str, project_id: Optional[str] = None) -> Project:
        with self._lock:
            if owner not in self._users:
                raise FabricError("UNKNOWN_USER", f"no user {owner!r}")
            if not name:
                raise FabricError("EMPTY_NAME", "project name must be non-empty")
            pid = project_id or _new_id("p")
            if pid in self._projects:
                raise FabricError("DUPLICATE_ID", f"project {pid!r} already exists")
            project = Project(
                id=pid,
                name=name,
                owner=owner,
                members={owner: ROLE_OWNER},
                adapter_grants=frozenset(),
                created_at=now_ms(),
            )
            self._projects[pid] = project
            return project

    def get_project(self, project_id: str) -> Project:
        project = self._projects.get(project_id)
        if project is None:
            raise FabricError("UNKNOWN_PROJECT", f"no project {project_id!r}")
        return project

    def list_projects(self) -> list[Project]:
        with self._lock:
            return sorted(self._projects.values(), key=lambda p: p.id)

    def assign_role(self, project_id: str, actor: str, target: str, role: str) -> Project:
        if role not in ROLES:
            raise FabricError("INVALID_REQUEST", f"unknown role {role!r}")
        with self._lock:
            project = self.get_project(project_id)
            self._require_rank(project, actor, ROLE_ADMIN)
            if target not in self._users:
                raise FabricError("UNKNOWN_USER", f"no user {target!r}")
            members = dict(project.members)
            owner = project.owner
            if role == ROLE_OWNER:
                # Ownership transfer: exactly one OWNER at all times; the
                # previous owner steps down to ADMIN.
                if target != owner:
                    members[owner] = ROLE_ADMIN
                    owner = target
                members[target] = ROLE_OWNER
            else:
                if target == owner:
                    raise FabricError(
                        "FORBIDDEN",
                        "cannot demote the owner; transfer ownership by assigning OWNER first",
                    )
                members[target] = role
            updated = replace(project, members=members, owner=owner)
            self._projects[project_id] = updated
            return updated

    def grant_adapter(self, project_id: str, actor: str, adapter_id: str) -> Project:
        with self._lock:
            project = self.get_project(project_id)
            self._require_rank(project, actor, ROLE_ADMIN)
            if self._adapter_lookup is None or self._adapter_lookup(adapter_id) is None:
                raise FabricError("UNKNOWN_ADAPTER", f"no adapter {adapter_id!r}")
            updated = replace(project, adapter_grants=project.adapter_grants | {adapter_id})
            self._projects[project_id] = updated
            return updated

    def _require_rank(self, project: Project, actor: str, min_role: str) -> None:
        role = project.members.get(actor)
        if role is None or _ROLE_RANK[role] < _ROLE_RANK[min_role]:
            raise FabricError("FORBIDDEN", f"user {actor!r} needs {min_role} on {project.id!r}")

    def user_projects(self, user_id: str) -> frozenset[str]:
        """Ids of all projects where the user is a member."""
        with self._lock:
            return frozenset(p.id for p in self._projects.values() if user_id in p.members)

    # -- keys ----------------------------------------------------------------

    def issue_key(self, scope: KeyScope, rate_limit: Optional[RateLimit] = None) -> tuple[str, ApiKey]:
        """Mint a key; the raw token is returned here and never stored."""
        with self._lock:
            if scope.kind == SCOPE_USER:
                if scope.subject_id not in self._users:
                    raise FabricError("UNKNOWN_SCOPE", f"no user {scope.subject_id!r}")
            elif scope.kind == SCOPE_PROJECT:
                if scope.subject_id not in self._projects:
                    raise FabricError("UNKNOWN_SCOPE", f"no project {scope.subject_id!r}")
            else:
                raise FabricError("UNKNOWN_SCOPE", f"bad scope kind {scope.kind!r}")
            raw = generate_token()
            key = ApiKey(
                id=_new_id("key"),
                token_digest=hash_token(raw),
                scope=scope,
                status=KEY_ACTIVE,
                created_at=now_ms(),
                rate_limit=rate_limit or RateLimit(),
            )
            self._keys[key.id] = key
            self._digest_index[key.token_digest] = key.id
            return raw, key

    def get_key(self, key_id: str) -> ApiKey:
        key = self._keys.get(key_id)
        if key is None:
            raise FabricError("UNKNOWN_KEY", f"no key {key_id!r}")
        return key

    def list_keys(self) -> list[ApiKey]:
        with self._lock:
            return sorted(self._keys.values(), key=lambda k: k.id)

    def revoke_key(self, key_id: str) -> ApiKey:
        """Revocation is idempotent; a second call returns the record unchanged."""
        with self._lock:
            key = self.get_key(key_id)
            if key.status == KEY_REVOKED:
                return key
            updated = replace(key, status=KEY_REVOKED, revoked_at=now_ms())
            self._keys[key_id] = updated
            return updated

    def authenticate(self, raw_token: str) -> Principal:
        if not isinstance(raw_token, str) or not raw_token:
            raise FabricError("UNAUTHENTICATED", "missing token")
        digest = hash_token(raw_token)
        with self._lock:
            key_id = self._digest_index.get(digest)
            key = self._keys.get(key_id) if key_id else None
            if key is None or key.status != KEY_ACTIVE:
                raise FabricError("UNAUTHENTICATED", "unknown or revoked token")
            return Principal(key_id=key.id, scope=key.scope)

    # -- authorization ---------------------------------------------------------

    def authorize_adapter(self, principal: Principal, adapter_id: str) -> bool:
        """ALLOW (True) / DENY (False) for the principal to use the adapter.

        PUBLIC adapters are allowed for every principal. PRIVATE adapters
        require the adapter to be granted to the key's project, or, for
        user-scoped keys, to any project the user belongs to.
        """
        if self._adapter_lookup is None:
            raise FabricError("UNKNOWN_ADAPTER", "no adapter catalog wired")
        adapter = self._adapter_lookup(adapter_id)
        if adapter is None:
            raise FabricError("UNKNOWN_ADAPTER", f"no adapter {adapter_id!r}")
        if getattr(adapter, "visibility", None) == "PUBLIC":
            return True
        with self._lock:
            if principal.scope.kind == SCOPE_PROJECT:
                project = self._projects.get(principal.scope.subject_id)
                return project is not None and adapter_id in project.adapter_grants
            user_id = principal.scope.subject_id
            return any(
                user_id in p.members and adapter_id in p.adapter_grants
                for p in self._projects.values()
            )

    # -- snapshot ---------------------------------------------------------------

    def export(self) -> dict:
        """JSON-safe snapshot; key records carry digests only, never raw tokens."""
        with self._lock:
            return {
                "users": [
                    {"id": u.id, "display_name": u.display_name, "created_at": u.created_at}
                    for u in self.list_users()
                ],
                "projects": [
                    {
                        "id": p.id,
                        "name": p.name,
                        "owner": p.owner,
                        "members": [
                            {"user_id": uid, "role": role}
                            for uid, role in sorted(p.members.items())
                        ],
                        "adapter_grants": sorted(p.adapter_grants),
                        "created_at": p.created_at,
                    }
                    for p in self.list_projects()
                ],
                "keys": [
                    {
                        "id": k.id,
                        "token_digest": k.token_digest,
                        "scope": {"kind": k.scope.kind, "subject_id": k.scope.subject_id},
                        "status": k.status,
                        "created_at": k.created_at,
                        "revoked_at": k.revoked_at,
                        "rate_limit": {
                            "capacity": k.rate_limit.capacity,
                            "refill_per_minute": k.rate_limit.refill_per_minute,
                        },
                    }
                    for k in self.list_keys()
                ],
            }

    def load(self, doc: dict) -> None:
        with self._lock:
            for u in doc.get("users", []):
                self._users[u["id"]] = User(u["id"], u["display_name"], u["created_at"])
            for p in doc.get("projects", []):
                self._projects[p["id"]] = Project(
                    id=p["id"],
                    name=p["name"],
                    owner=p["owner"],
                    members={m["user_id"]: m["role"] for m in p["members"]},
                    adapter_grants=frozenset(p["adapter_grants"]),
                    created_at=p["created_at"],
                )
            for k in doc.get("keys", []):
                key = ApiKey(
                    id=k["id"],
                    token_digest=k["token_digest"],
                    scope=KeyScope(k["scope"]["kind"], k["scope"]["subject_id"]),
                    status=k["status"],
                    created_at=k["created_at"],
                    revoked_at=k.get("revoked_at"),
                    rate_limit=RateLimit(
                        k["rate_limit"]["capacity"], k["rate_limit"]["refill_per_minute"]
                    ),
                )
                self._keys[key.id] = key
                self._digest_index[key.token_digest] = key.id
