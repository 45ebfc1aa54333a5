import { HubClient, ConnectionState } from "./hubClient.js";
import { Envelope, Station } from "./protocol.js";
import {
  SessionView,
  applyEnvelope,
  countdownText,
  emptyView,
  formatCount,
  proposalLine,
  statusClass,
  suitabilityLabel,
} from "./viewModel.js";
import { GRID_COLS, GRID_ROWS, fitsGrid } from "./grid.js";

type Route = "overview" | "district" | "neighborhood" | "wall";

const ROUTES: Route[] = ["overview", "district", "neighborhood", "wall"];

const STATION_FOR_ROUTE: Partial<Record<Route, Station>> = {
  overview: "CityOverview",
  district: "District",
  neighborhood: "Neighborhood",
};

// Palette mirrors the bundled brick table: one button per housing brick.
const BRICK_CAPACITIES = [40, 100, 250, 500, 1000, 1500];
const BRICK_SIZE = 2;

function parseRoute(hash: string): Route {
  const name = hash.replace(/^#\//, "");
  return (ROUTES as string[]).includes(name) ? (name as Route) : "wall";
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

interface Panels {
  connection: HTMLElement;
  countdown: HTMLElement;
  statusBadge: HTMLElement;
  totals: HTMLElement;
  district: HTMLElement;
  extent: HTMLElement;
  proposals: HTMLUListElement;
  parcel: HTMLElement;
  errors: HTMLElement;
  grid: HTMLElement | null;
}

function buildStationNav(client: HubClient, route: Route): HTMLElement {
  const nav = el("nav", "stations");
  for (const target of ROUTES) {
    const link = el("a", target === route ? "active" : "", target);
    link.href = `#/${target}`;
    nav.appendChild(link);
  }
  const station = STATION_FOR_ROUTE[route];
  if (station) {
    const move = el("button", "move-here", `bring table to ${station}`);
    move.onclick = () => client.command({ kind: "change_station", to: station });
    nav.appendChild(move);
  }
  return nav;
}

function buildGrid(client: HubClient, root: HTMLElement): HTMLElement {
  const wrap = el("section", "grid-panel");
  wrap.appendChild(el("h2", "", "table grid"));

  const palette = el("div", "palette");
  let selected = BRICK_CAPACITIES[0] ?? 40;
  const buttons: HTMLButtonElement[] = [];
  for (const capacity of BRICK_CAPACITIES) {
    const btn = el("button", "brick", formatCount(capacity));
    btn.onclick = () => {
      selected = capacity;
      buttons.forEach((b) => b.classList.remove("selected"));
      btn.classList.add("selected");
    };
    buttons.push(btn);
    palette.appendChild(btn);
  }
  buttons[0]?.classList.add("selected");
  wrap.appendChild(palette);

  // Local mirror of what this station has placed, keyed by anchor cell,
  // so a second click on the same anchor lifts the brick again.
  const placed = new Map<string, number>();
  let scanSeq = 0;

  const grid = el("div", "grid");
  grid.style.gridTemplateColumns = `repeat(${GRID_COLS}, 1fr)`;
  for (let row = 0; row < GRID_ROWS; row += 1) {
    for (let col = 0; col < GRID_COLS; col += 1) {
      const cell = el("button", "cell");
      cell.title = `row ${row}, col ${col}`;
      cell.onclick = () => {
        const key = `${row},${col}`;
        const existing = placed.get(key);
        scanSeq += 1;
        if (existing !== undefined) {
          client.command({
            kind: "brick",
            event: {
              action: "Removed",
              brick: { kind: "Housing", capacity: existing },
              at: [row, col],
              scan_seq: scanSeq,
            },
          });
          placed.delete(key);
          cell.classList.remove("occupied");
          cell.textContent = "";
          return;
        }
        if (!fitsGrid({ row, col }, BRICK_SIZE)) return;
        client.command({
          kind: "brick",
          event: {
            action: "Placed",
            brick: { kind: "Housing", capacity: selected },
            at: [row, col],
            scan_seq: scanSeq,
          },
        });
        placed.set(key, selected);
        cell.classList.add("occupied");
        cell.textContent = String(selected);
      };
      grid.appendChild(cell);
    }
  }
  wrap.appendChild(grid);
  root.appendChild(wrap);
  return wrap;
}

function buildLayout(client: HubClient, route: Route): Panels {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app container");
  root.textContent = "";
  root.dataset.route = route;

  const header = el("header");
  header.appendChild(el("h1", "", "siting table"));
  header.appendChild(buildStationNav(client, route));
  const connection = el("span", "connection", "connecting");
  header.appendChild(connection);
  root.appendChild(header);

  const countdownPanel = el("section", "countdown-panel");
  const countdown = el("div", "countdown", "waiting for session");
  const statusBadge = el("span", "badge status-open", "open");
  const totals = el("div", "totals", "");
  countdownPanel.append(countdown, statusBadge, totals);
  root.appendChild(countdownPanel);

  const district = el("section", "district-panel", "no district yet");
  const extent = el("section", "extent-panel", "no focus yet");
  if (route === "overview" || route === "district" || route === "wall") {
    root.appendChild(district);
    root.appendChild(extent);
  }

  const proposalsPanel = el("section", "proposals-panel");
  proposalsPanel.appendChild(el("h2", "", "active proposals"));
  const proposals = el("ul", "proposals");
  proposalsPanel.appendChild(proposals);
  root.appendChild(proposalsPanel);

  const parcel = el("section", "parcel-panel", "no parcel selected");
  if (route === "neighborhood" || route === "wall") {
    root.appendChild(parcel);
  }

  let grid: HTMLElement | null = null;
  if (route === "neighborhood") {
    grid = buildGrid(client, root);
    const commentForm = buildCommentForm(client);
    root.appendChild(commentForm);
  }

  const errors = el("footer", "errors", "");
  root.appendChild(errors);

  return {
    connection,
    countdown,
    statusBadge,
    totals,
    district,
    extent,
    proposals,
    parcel,
    errors,
    grid,
  };
}

function buildCommentForm(client: HubClient): HTMLElement {
  const form = el("section", "comment-panel");
  form.appendChild(el("h2", "", "comment on a parcel"));
  const parcelInput = el("input") as HTMLInputElement;
  parcelInput.placeholder = "parcel id";
  const textInput = el("input") as HTMLInputElement;
  textInput.placeholder = "what the group said";
  const stanceSelect = el("select") as HTMLSelectElement;
  for (const stance of ["Pro", "Con"]) {
    const opt = el("option", "", stance) as HTMLOptionElement;
    opt.value = stance;
    stanceSelect.appendChild(opt);
  }
  const send = el("button", "", "record comment");
  send.onclick = () => {
    if (!parcelInput.value || !textInput.value) return;
    client.command({
      kind: "comment",
      parcel_id: parcelInput.value,
      stance: stanceSelect.value === "Con" ? "Con" : "Pro",
      text: textInput.value,
    });
    textInput.value = "";
  };
  form.append(parcelInput, stanceSelect, textInput, send);
  return form;
}

function renderView(panels: Panels, view: SessionView): void {
  panels.countdown.textContent = countdownText(view.stats);
  if (view.stats) {
    panels.statusBadge.textContent = view.stats.status;
    panels.statusBadge.className = `badge ${statusClass(view.stats.status)}`;
    panels.totals.textContent =
      `${formatCount(view.stats.proposed_total)} proposed of ` +
      `${formatCount(view.stats.target_total)} target`;
  }
  if (view.district) {
    panels.district.textContent =
      `${view.district.district_id}: population ${formatCount(view.district.population)}, ` +
      `currently hosting ${formatCount(view.district.current_refugees)}`;
  }
  if (view.extents) {
    const e = view.extents.extent;
    panels.extent.textContent =
      `${view.extents.station} on ${view.extents.district_id} ` +
      `(1:${formatCount(view.extents.scale_denominator)}, ` +
      `x ${e.min_x.toFixed(0)}..${e.max_x.toFixed(0)}, ` +
      `y ${e.min_y.toFixed(0)}..${e.max_y.toFixed(0)})`;
  }
  panels.proposals.textContent = "";
  for (const proposal of view.proposals) {
    panels.proposals.appendChild(el("li", "", proposalLine(proposal)));
  }
  if (view.proposals.length === 0) {
    panels.proposals.appendChild(el("li", "muted", "none yet"));
  }
  renderParcel(panels.parcel, view);
}

function renderParcel(node: HTMLElement, view: SessionView): void {
  const panel = view.parcel;
  node.textContent = "";
  switch (panel.kind) {
    case "empty":
      node.textContent = "no parcel selected";
      return;
    case "no_parcel":
      node.textContent = `nothing here (${panel.x.toFixed(1)}, ${panel.y.toFixed(1)})`;
      return;
    case "rejected":
      node.textContent = `rejected: ${panel.reason}`;
      return;
    case "detail": {
      const info = panel.info;
      node.appendChild(el("h2", "", info.parcel_id));
      const facts = el("ul", "facts");
      facts.appendChild(el("li", "", `designation: ${info.designation}`));
      facts.appendChild(el("li", "", `area: ${formatCount(Math.round(info.area_m2))} m2`));
      facts.appendChild(
        el("li", "", `assessment: ${suitabilityLabel(info.suitability)}, fits ${formatCount(info.capacity)}`),
      );
      if (info.city_owned !== undefined) {
        facts.appendChild(el("li", "", info.city_owned ? "city owned" : "privately owned"));
      }
      for (const reg of info.regulations) {
        facts.appendChild(el("li", "regulation", reg));
      }
      for (const hit of info.restrictions) {
        facts.appendChild(
          el("li", "restriction", `${hit.layer}: ${(hit.coverage * 100).toFixed(0)}% covered`),
        );
      }
      node.appendChild(facts);
    }
  }
}

function wsUrl(): string {
  const scheme = location.protocol === "https:" ? "wss" : "ws";
  return `${scheme}://${location.host}/ws`;
}

function main(): void {
  const params = new URLSearchParams(location.search);
  const client = new HubClient(wsUrl(), {
    token: params.get("token") ?? undefined,
  });

  let view = emptyView();
  let panels = buildLayout(client, parseRoute(location.hash));

  const fold = (_payload: unknown, envelope: Envelope) => {
    view = applyEnvelope(view, envelope);
    renderView(panels, view);
  };
  client.subscribe("global_stats", fold);
  client.subscribe("district_state", fold);
  client.subscribe("map_extents", fold);
  client.subscribe("proposals", fold);
  client.subscribe("parcel_detail", fold);

  client.onState((state: ConnectionState) => {
    panels.connection.textContent = state;
    panels.connection.className = `connection ${state}`;
  });
  client.onError((message) => {
    panels.errors.textContent = message;
  });

  window.addEventListener("hashchange", () => {
    panels = buildLayout(client, parseRoute(location.hash));
    renderView(panels, view);
  });

  client.connect();
}

document.addEventListener("DOMContentLoaded", main);
