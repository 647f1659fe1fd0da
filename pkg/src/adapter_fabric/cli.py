"""Operator command line: identity bootstrapping, catalog management,
tenant keys, audit export, document ingestion, and the API server.

State lives in a directory (default ./fabric-state) holding state.json,
audit.ndjson, and documents.ndjson. Raw API tokens are printed exactly
once at issue time and never stored.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys

from .errors import FabricError
from .platform import open_platform, save_platform
from .registry import PRECISION_BYTES
from .tenancy import KeyScope, RateLimit, now_ms


def _open(args):
    return open_platform(args.state)


def _emit(doc) -> None:
    print(json.dumps(doc, indent=2, sort_keys=True, default=str))


def cmd_init(args) -> int:
    platform = _open(args)
    save_platform(platform, args.state)
    print(f"initialized state in {args.state}")
    return 0


def cmd_user_create(args) -> int:
    platform = _open(args)
    user = platform.tenancy.create_user(args.name, user_id=args.id)
    save_platform(platform, args.state)
    _emit({"id": user.id, "display_name": user.display_name})
    return 0


def cmd_project_create(args) -> int:
    platform = _open(args)
    project = platform.tenancy.create_project(args.owner, args.name, project_id=args.id)
    save_platform(platform, args.state)
    _emit({"id": project.id, "name": project.name, "owner": project.owner})
    return 0


def cmd_role_assign(args) -> int:
    platform = _open(args)
    project = platform.tenancy.assign_role(args.project, args.actor, args.target, args.role)
    save_platform(platform, args.state)
    _emit({"id": project.id, "members": project.members})
    return 0


def cmd_grant(args) -> int:
    platform = _open(args)
    project = platform.tenancy.grant_adapter(args.project, args.actor, args.adapter)
    save_platform(platform, args.state)
    _emit({"id": project.id, "adapter_grants": sorted(project.adapter_grants)})
    return 0


def cmd_key_issue(args) -> int:
    platform = _open(args)
    scope = KeyScope.user(args.user) if args.user else KeyScope.project(args.project)
    rate_limit = None
    if args.capacity or args.refill:
        rate_limit = RateLimit(args.capacity or 60, args.refill or 60)
    raw, key = platform.issue_key(scope, rate_limit)
    save_platform(platform, args.state)
    _emit(
        {
            "raw_token": raw,
            "note": "store this token now; it is never shown again",
            "key_id": key.id,
            "scope": {"kind": key.scope.kind, "subject_id": key.scope.subject_id},
        }
    )
    return 0


def cmd_key_revoke(args) -> int:
    platform = _open(args)
    key = platform.tenancy.revoke_key(args.id)
    save_platform(platform, args.state)
    _emit({"key_id": key.id, "status": key.status, "revoked_at": key.revoked_at})
    return 0


def cmd_base_model_register(args) -> int:
    platform = _open(args)
    model = platform.registry.register_base_model(
        args.id, args.family, int(float(args.params)), args.precision, args.template
    )
    save_platform(platform, args.state)
    vram = platform.registry.estimate_vram(model)
    _emit({"id": model.id, "family": model.family, "estimated_vram_gb": vram / 1e9})
    return 0


def cmd_adapter_register(args) -> int:
    platform = _open(args)
    adapter = platform.registry.register_adapter(
        adapter_id=args.id,
        base_model_id=args.base_model,
        artifact_uri=args.uri,
        targets=[t for t in args.targets.split(",") if t],
        rank=args.rank,
        visibility=args.visibility,
        owner_project=args.owner_project,
    )
    save_platform(platform, args.state)
    _emit({"id": adapter.id, "base_model_id": adapter.base_model_id, "visibility": adapter.visibility})
    return 0


def cmd_mixture_resolve(args) -> int:
    platform = _open(args)
    components = []
    for part in args.components.split(","):
        adapter_id, _, weight = part.partition("=")
        components.append((adapter_id, float(weight) if weight else 1.0))
    mixture = platform.registry.resolve_mixture(components)
    save_platform(platform, args.state)
    _emit(
        {
            "id": mixture.id,
            "base_model_id": mixture.base_model_id,
            "components": [{"adapter_id": a, "weight": w} for a, w in mixture.components],
        }
    )
    return 0


def cmd_tenant_key(args) -> int:
    platform = _open(args)
    key = base64.b64decode(args.key_b64) if args.key_b64 else None
    key = platform.keyring.provision(args.tenant, key)
    save_platform(platform, args.state)
    _emit({"tenant_id": args.tenant, "key_b64": base64.b64encode(key).decode("ascii")})
    return 0


def cmd_vram(args) -> int:
    platform = _open(args)
    model = platform.registry.get_base_model(args.model)
    vram = platform.registry.estimate_vram(model)
    _emit(
        {
            "model": model.id,
            "precision": model.precision,
            "bytes": vram,
            "gb": vram / 1e9,
            "bytes_per_parameter": PRECISION_BYTES[model.precision],
        }
    )
    return 0


def cmd_audit_export(args) -> int:
    platform = _open(args)
    start = args.start if args.start is not None else 0
    end = args.end if args.end is not None else now_ms() + 1
    for record in platform.ledger.records():
        if args.key and record.key_id != args.key:
            continue
        if not (start <= record.timestamp < end):
            continue
        print(record.to_json())
    return 0


def cmd_docs_ingest(args) -> int:
    platform = _open(args)
    with open(args.file, "r", encoding="utf-8") as fh:
        count = platform.vectors.ingest_ndjson(fh)
    save_platform(platform, args.state)
    _emit({"indexed": count, "total": len(platform.vectors)})
    return 0


def cmd_docs_search(args) -> int:
    platform = _open(args)
    projects = frozenset(p for p in args.projects.split(",") if p)
    # Operator-side search: scope comes from the flag, not from a key.
    platform.vectors.set_project_scope(lambda principal: projects)
    results = platform.vectors.search(None, args.query, args.k)
    _emit({"results": [{"doc_id": d, "distance": dist} for d, dist in results]})
    return 0


def cmd_models_list(args) -> int:
    platform = _open(args)
    _emit(
        {
            "base_models": [m.id for m in platform.registry.list_base_models()],
            "adapters": [a.id for a in platform.registry.list_all_adapters()],
            "mixtures": [m.id for m in platform.registry.list_mixtures()],
        }
    )
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .http_api import build_app

    platform = open_platform(args.state)
    app = build_app(platform, ui_dir=args.ui, sweep_interval_s=args.sweep_interval)
    uvicorn.run(app, host=args.host, port=args.port, log_level=args.log_level, access_log=False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adapter-fabric", description=__doc__)
    parser.add_argument("--state", default="./fabric-state", help="state directory")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("init", help="create an empty state directory").set_defaults(func=cmd_init)

    p = sub.add_parser("user", help="user management")
    usub = p.add_subparsers(dest="subcommand", required=True)
    pc = usub.add_parser("create")
    pc.add_argument("--name", required=True)
    pc.add_argument("--id", default=None)
    pc.set_defaults(func=cmd_user_create)

    p = sub.add_parser("project", help="project management")
    psub = p.add_subparsers(dest="subcommand", required=True)
    pc = psub.add_parser("create")
    pc.add_argument("--owner", required=True)
    pc.add_argument("--name", required=True)
    pc.add_argument("--id", default=None)
    pc.set_defaults(func=cmd_project_create)

    p = sub.add_parser("role", help="role assignment")
    rsub = p.add_subparsers(dest="subcommand", required=True)
    pc = rsub.add_parser("assign")
    pc.add_argument("--project", required=True)
    pc.add_argument("--actor", required=True)
    pc.add_argument("--target", required=True)
    pc.add_argument("--role", required=True, choices=("MEMBER", "ADMIN", "OWNER"))
    pc.set_defaults(func=cmd_role_assign)

    p = sub.add_parser("grant", help="grant an adapter to a project")
    p.add_argument("--project", required=True)
    p.add_argument("--actor", required=True)
    p.add_argument("--adapter", required=True)
    p.set_defaults(func=cmd_grant)

    p = sub.add_parser("key", help="API key lifecycle")
    ksub = p.add_subparsers(dest="subcommand", required=True)
    pc = ksub.add_parser("issue")
    group = pc.add_mutually_exclusive_group(required=True)
    group.add_argument("--user")
    group.add_argument("--project")
    pc.add_argument("--capacity", type=int, default=None)
    pc.add_argument("--refill", type=int, default=None)
    pc.set_defaults(func=cmd_key_issue)
    pc = ksub.add_parser("revoke")
    pc.add_argument("--id", required=True)
    pc.set_defaults(func=cmd_key_revoke)

    p = sub.add_parser("base-model", help="base model catalog")
    bsub = p.add_subparsers(dest="subcommand", required=True)
    pc = bsub.add_parser("register")
    pc.add_argument("--id", required=True)
    pc.add_argument("--family", required=True)
    pc.add_argument("--params", required=True, help="parameter count, e.g. 7e9")
    pc.add_argument("--precision", default="FP16", choices=tuple(PRECISION_BYTES))
    pc.add_argument("--template", default="default")
    pc.set_defaults(func=cmd_base_model_register)

    p = sub.add_parser("adapter", help="adapter catalog")
    asub = p.add_subparsers(dest="subcommand", required=True)
    pc = asub.add_parser("register")
    pc.add_argument("--id", required=True)
    pc.add_argument("--base-model", required=True)
    pc.add_argument("--uri", required=True)
    pc.add_argument("--targets", required=True, help="comma-separated target modules")
    pc.add_argument("--rank", type=int, default=16)
    pc.add_argument("--visibility", default="PRIVATE", choices=("PUBLIC", "PRIVATE"))
    pc.add_argument("--owner-project", default=None)
    pc.set_defaults(func=cmd_adapter_register)

    p = sub.add_parser("mixture", help="adapter mixtures")
    msub = p.add_subparsers(dest="subcommand", required=True)
    pc = msub.add_parser("resolve")
    pc.add_argument("--components", required=True, help="a=0.75,b=0.25")
    pc.set_defaults(func=cmd_mixture_resolve)

    p = sub.add_parser("tenant-key", help="provision a tenant data-plane key")
    p.add_argument("--tenant", required=True)
    p.add_argument("--key-b64", default=None)
    p.set_defaults(func=cmd_tenant_key)

    p = sub.add_parser("vram", help="weight-storage estimate for a base model")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_vram)

    p = sub.add_parser("audit", help="audit trail")
    audit_sub = p.add_subparsers(dest="subcommand", required=True)
    pc = audit_sub.add_parser("export")
    pc.add_argument("--key", default=None)
    pc.add_argument("--start", type=int, default=None)
    pc.add_argument("--end", type=int, default=None)
    pc.set_defaults(func=cmd_audit_export)

    p = sub.add_parser("docs", help="document store")
    dsub = p.add_subparsers(dest="subcommand", required=True)
    pc = dsub.add_parser("ingest")
    pc.add_argument("--file", required=True, help="newline-delimited JSON: doc_id, text, acl")
    pc.set_defaults(func=cmd_docs_ingest)
    pc = dsub.add_parser("search")
    pc.add_argument("--query", required=True)
    pc.add_argument("--k", type=int, default=5)
    pc.add_argument("--projects", required=True, help="comma-separated project scope")
    pc.set_defaults(func=cmd_docs_search)

    p = sub.add_parser("models", help="catalog listing")
    msub = p.add_subparsers(dest="subcommand", required=True)
    pc = msub.add_parser("list")
    pc.set_defaults(func=cmd_models_list)

    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--ui", default=None, help="directory of static playground files")
    p.add_argument("--sweep-interval", type=float, default=None)
    p.add_argument("--log-level", default="warning")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FabricError as err:
        print(f"error [{err.code}]: {err.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
