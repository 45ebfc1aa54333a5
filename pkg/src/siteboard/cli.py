"""Operator command line: generate data, run pipelines, serve workshops.

Subcommands:
  gen-city   write a synthetic city (parcels, layers, districts, ledger)
  ingest     validate a parcel file and report per-feature rejections
  classify   run suitability classification over a data directory
  screen     run the screening funnel over exported suggestions
  replay     replay a scripted scenario headless against a data directory
  serve      run the live hub + session engine (WebSocket service)
  report     render a screening report JSON as Markdown

Configuration is one JSON file (--config); the data directory may also
come from the SITEBOARD_DATA environment variable. Exit codes: 0 success,
1 domain rejection (a command or rule was refused), 2 config/IO error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click

from .citygen import DEFAULT_LAYER_SPEC, LayerSpecError, generate_city, write_city
from .geometry import ParcelFileError, ingest_parcels, export_parcels
from .scenarios import Scenario, ScenarioError, run_scenario
from .screening import (
    RuleSet,
    ScreeningError,
    default_rules,
    load_report,
    report_render,
    screen,
    summary_line,
    write_report,
)
from .session import (
    SessionDataset,
    SessionStore,
    write_suggestions,
    read_suggestions,
)
from .server import ServeSettings, run_server
from .suitability import export_assessments

CONFIG_ERRORS = (ParcelFileError, LayerSpecError, ScreeningError, OSError, json.JSONDecodeError)


def _die(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


@dataclasses.dataclass
class AppConfig:
    data_dir: str | None = None
    store_dir: str | None = None
    target_total: int | None = None
    rules: str | None = None
    serve: dict = dataclasses.field(default_factory=dict)

    def require_data_dir(self) -> Path:
        if not self.data_dir:
            _die(2, "no data directory; pass --data, set SITEBOARD_DATA, or put data_dir in the config")
        return Path(self.data_dir)


def _load_config(config_path: str | None, data_dir: str | None) -> AppConfig:
    cfg = AppConfig()
    if config_path:
        try:
            doc = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except OSError as exc:
            _die(2, f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            _die(2, f"{config_path}: config is not valid JSON: {exc}")
        if not isinstance(doc, dict):
            _die(2, f"{config_path}: config must be a JSON object")
        cfg = AppConfig(
            data_dir=doc.get("data_dir"),
            store_dir=doc.get("store_dir"),
            target_total=doc.get("target_total"),
            rules=doc.get("rules"),
            serve=doc.get("serve", {}) or {},
        )
    if data_dir:
        cfg.data_dir = data_dir
    return cfg


@click.group(help=__doc__)
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="JSON config file")
@click.option("--data", "data_dir", type=click.Path(), envvar="SITEBOARD_DATA", default=None,
              help="Data directory (overrides config; env var SITEBOARD_DATA)")
@click.pass_context
def main(ctx: click.Context, config_path: str | None, data_dir: str | None) -> None:
    ctx.obj = _load_config(config_path, data_dir)


@main.command("gen-city")
@click.option("--seed", default=42, show_default=True, help="Deterministic generation seed")
@click.option("--parcels", "n_parcels", default=1000, show_default=True)
@click.option("--districts", "n_districts", default=7, show_default=True)
@click.option("--layer-spec", "layer_spec_path", type=click.Path(), default=None,
              help="JSON list of {name, severity} layer definitions")
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_gen_city(seed: int, n_parcels: int, n_districts: int,
                 layer_spec_path: str | None, out_dir: str) -> None:
    """Generate a synthetic city with a ground-truth coverage ledger."""
    layer_spec = DEFAULT_LAYER_SPEC
    if layer_spec_path:
        try:
            layer_spec = json.loads(Path(layer_spec_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            _die(2, f"cannot read layer spec: {exc}")
    try:
        bundle = generate_city(seed=seed, n_parcels=n_parcels,
                               layer_spec=layer_spec, n_districts=n_districts)
    except (LayerSpecError, ValueError) as exc:
        _die(2, str(exc))
    paths = write_city(bundle, out_dir)
    click.echo(f"generated {len(bundle.parcel_set.ids())} parcels in "
               f"{len(bundle.districts)} districts with {len(bundle.layers)} layers")
    for key in sorted(paths):
        click.echo(f"  {key}: {paths[key]}")


@main.command("ingest")
@click.argument("parcel_file", type=click.Path())
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Re-export the accepted parcels as canonical GeoJSON")
@click.option("--strict", is_flag=True, help="Exit 1 if any feature was rejected")
def cmd_ingest(parcel_file: str, out_path: str | None, strict: bool) -> None:
    """Validate a parcel file; report accepted and rejected features."""
    try:
        result = ingest_parcels(parcel_file)
    except CONFIG_ERRORS as exc:
        _die(2, str(exc))
    click.echo(f"accepted {len(result.parcel_set.ids())}, rejected {len(result.rejected)}")
    for rej in result.rejected:
        click.echo(f"  feature {rej.index} ({rej.feature_id or 'no id'}): {rej.reason}")
    if out_path:
        export_parcels(result.parcel_set, out_path)
        click.echo(f"wrote {out_path}")
    if strict and result.rejected:
        sys.exit(1)


@main.command("classify")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Assessment CSV destination (default: <data>/assessments.csv)")
@click.pass_obj
def cmd_classify(cfg: AppConfig, out_path: str | None) -> None:
    """Classify every parcel in the data directory and export a CSV."""
    data = cfg.require_data_dir()
    try:
        ds = SessionDataset.load(data)
    except CONFIG_ERRORS as exc:
        _die(2, str(exc))
    assessments = list(ds.assessments.values())
    out = Path(out_path) if out_path else data / "assessments.csv"
    export_assessments(assessments, out)
    counts = {"high": 0, "medium": 0, "low": 0}
    for a in assessments:
        counts[a.suitability.value] += 1
    total_capacity = sum(a.capacity for a in assessments)
    click.echo(
        f"classified {len(assessments)} parcels: "
        f"{counts['high']} high, {counts['medium']} medium, {counts['low']} low; "
        f"theoretical capacity {total_capacity}"
    )
    click.echo(f"wrote {out}")


@main.command("screen")
@click.option("--suggestions", "suggestions_path", required=True, type=click.Path())
@click.option("--rules", "rules_path", type=click.Path(), default=None,
              help="Screening rules JSON (default: config 'rules' or built-in rules)")
@click.option("--detail-budget", type=int, default=None,
              help="Cap on detailed assessments; overflow goes to future consideration")
@click.option("--out-json", "json_path", type=click.Path(), default=None)
@click.option("--out-md", "md_path", type=click.Path(), default=None)
@click.pass_obj
def cmd_screen(cfg: AppConfig, suggestions_path: str, rules_path: str | None,
               detail_budget: int | None, json_path: str | None, md_path: str | None) -> None:
    """Run the two-stage screening funnel over exported suggestions."""
    try:
        suggestions = read_suggestions(suggestions_path)
    except CONFIG_ERRORS as exc:
        _die(2, str(exc))
    rules_path = rules_path or cfg.rules
    try:
        ruleset = RuleSet.load(rules_path) if rules_path else default_rules()
        if detail_budget is not None:
            ruleset = dataclasses.replace(ruleset, detail_budget=detail_budget)
        report = screen(suggestions, ruleset)
    except (ScreeningError, OSError) as exc:
        _die(2, str(exc))
    click.echo(summary_line(report))
    if json_path or md_path:
        write_report(report, json_path or Path(suggestions_path).with_suffix(".report.json"), md_path)
        if json_path:
            click.echo(f"wrote {json_path}")
        if md_path:
            click.echo(f"wrote {md_path}")


@main.command("replay")
@click.option("--scenario", "scenario_path", required=True, type=click.Path())
@click.option("--store", "store_dir", type=click.Path(), default=None,
              help="Session log directory (default: <out>/store)")
@click.option("--out", "out_dir", type=click.Path(), default="replay-out", show_default=True)
@click.pass_obj
def cmd_replay(cfg: AppConfig, scenario_path: str, store_dir: str | None, out_dir: str) -> None:
    """Replay a scripted scenario headless; write suggestions, stats, hashes."""
    try:
        scenario = Scenario.load(scenario_path)
    except (ScenarioError, OSError) as exc:
        _die(2, str(exc))
    data = cfg.require_data_dir()
    if not (data / "parcels.geojson").exists():
        generator = (scenario.dataset or {}).get("generator")
        if generator:
            # scenario is bound to a deterministic city; materialize it
            bundle = generate_city(
                seed=generator.get("seed", 42), n_parcels=generator.get("n_parcels", 1000)
            )
            write_city(bundle, data)
            click.echo(f"generated scenario city into {data}")
        else:
            _die(2, f"{data}: no parcels.geojson and the scenario names no generator")
    try:
        ds = SessionDataset.load(data)
    except CONFIG_ERRORS as exc:
        _die(2, str(exc))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = SessionStore(store_dir or (cfg.store_dir or out / "store"))
    try:
        result = run_scenario(ds, scenario, store)
    except ScenarioError as exc:
        _die(1, str(exc))
    write_suggestions(result.suggestions, out / "suggestions.ndjson")
    stats = result.stats()
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n",
                                    encoding="utf-8")
    click.echo(
        f"{stats['proposed_total']} places proposed across {len(result.runs)} sessions; "
        f"remaining {stats['remaining']} ({stats['status']})"
    )
    for sess in stats["sessions"]:
        click.echo(f"  {sess['session_id']}: capacity {sess['session_capacity']}, "
                   f"hash {sess['state_hash'][:16]}")
    click.echo(f"wrote {out / 'suggestions.ndjson'} and {out / 'stats.json'}")


@main.command("serve")
@click.option("--host", default=None, help="Bind host (default 127.0.0.1)")
@click.option("--port", type=int, default=None, help="Bind port (default 8700)")
@click.option("--session-id", default=None)
@click.option("--district", "district_id", default=None)
@click.option("--target", "target_total", type=int, default=None)
@click.option("--token", default=None, help="Shared table/publisher token")
@click.option("--store", "store_dir", type=click.Path(), default=None)
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Static UI directory to serve at /")
@click.pass_obj
def cmd_serve(cfg: AppConfig, host: str | None, port: int | None, session_id: str | None,
              district_id: str | None, target_total: int | None, token: str | None,
              store_dir: str | None, static_dir: str | None) -> None:
    """Serve the live session: WebSocket hub, engine, and static UI."""
    data = cfg.require_data_dir()
    try:
        ds = SessionDataset.load(data)
    except CONFIG_ERRORS as exc:
        _die(2, str(exc))
    serve_cfg = cfg.serve
    defaults = ServeSettings()
    settings = ServeSettings(
        host=host or serve_cfg.get("host", defaults.host),
        port=port if port is not None else serve_cfg.get("port", defaults.port),
        session_id=session_id or serve_cfg.get("session_id", defaults.session_id),
        district_id=district_id or serve_cfg.get("district", defaults.district_id),
        target_total=target_total if target_total is not None
        else (serve_cfg.get("target_total") or cfg.target_total),
        token=token or serve_cfg.get("token", defaults.token),
        static_dir=static_dir or serve_cfg.get("static_dir"),
    )
    if settings.district_id not in ds.districts:
        _die(1, f"unknown district {settings.district_id!r}; "
                f"available: {', '.join(sorted(ds.districts))}")
    store = SessionStore(store_dir or (cfg.store_dir or data / "sessions"))
    click.echo(f"serving session {settings.session_id} (district {settings.district_id}) "
               f"on ws://{settings.host}:{settings.port}/ws")
    try:
        run_server(ds, store, settings)
    except OSError as exc:
        _die(2, f"cannot bind {settings.host}:{settings.port}: {exc}")
    except SystemExit as exc:
        if exc.code:
            _die(2, "server startup failed")


@main.command("report")
@click.option("--report", "report_path", required=True, type=click.Path(),
              help="Screening report JSON as written by the screen command")
@click.option("--out", "out_path", type=click.Path(), default=None,
              help="Markdown destination (default: stdout)")
def cmd_report(report_path: str, out_path: str | None) -> None:
    """Render a screening report as a publishable Markdown document."""
    try:
        rep = load_report(report_path)
    except CONFIG_ERRORS as exc:
        _die(2, str(exc))
    document = report_render(rep)
    if out_path:
        Path(out_path).write_text(document, encoding="utf-8")
        click.echo(f"wrote {out_path}")
        click.echo(summary_line(rep))
    else:
        click.echo(document, nl=False)


if __name__ == "__main__":
    main()
