/** Hand-rolled SVG time-series charts for trajectory pairs.
 *
 * Outputs are normalized to [0, 1] over the window (the grader compares
 * shapes, not magnitudes); the reference level is drawn as a dashed line in
 * the same normalization, and the window end carries a marker.
 */

const SVG_NS = "http://www.w3.org/2000/svg";

export interface SeriesSpec {
  t: number[];
  y: number[];
  rStart: number;
  rEnd: number;
  label: string;
  window: number;
}

export interface ChartOptions {
  width?: number;
  height?: number;
  margin?: number;
}

interface Scale {
  lo: number;
  hi: number;
}

/** Normalization bounds covering the trace and both reference levels. */
export function seriesBounds(spec: SeriesSpec): Scale {
  let lo = Math.min(spec.rStart, spec.rEnd);
  let hi = Math.max(spec.rStart, spec.rEnd);
  for (const v of spec.y) {
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (hi - lo < 1e-12) {
    hi = lo + 1.0;
  }
  return { lo, hi };
}

export function normalize(value: number, scale: Scale): number {
  return (value - scale.lo) / (scale.hi - scale.lo);
}

function svgElement<K extends keyof SVGElementTagNameMap>(
  tag: K,
  attrs: Record<string, string>,
): SVGElementTagNameMap[K] {
  const el = document.createElementNS(SVG_NS, tag);
  for (const [key, value] of Object.entries(attrs)) {
    el.setAttribute(key, value);
  }
  return el;
}

export function renderChart(spec: SeriesSpec, options: ChartOptions = {}): SVGSVGElement {
  const width = options.width ?? 640;
  const height = options.height ?? 180;
  const margin = options.margin ?? 24;
  const innerW = width - 2 * margin;
  const innerH = height - 2 * margin;
  const scale = seriesBounds(spec);
  const tEnd = spec.window > 0 ? spec.window : spec.t[spec.t.length - 1] ?? 1;

  const xOf = (t: number) => margin + (t / tEnd) * innerW;
  const yOf = (v: number) => margin + (1 - normalize(v, scale)) * innerH;

  const svg = svgElement("svg", {
    width: String(width),
    height: String(height),
    viewBox: `0 0 ${width} ${height}`,
    class: "trajectory-chart",
    role: "img",
  });
  svg.dataset.label = spec.label;
  svg.dataset.sampleCount = String(spec.y.length);

  svg.appendChild(svgElement("rect", {
    x: String(margin), y: String(margin),
    width: String(innerW), height: String(innerH),
    fill: "none", stroke: "#ccc", "stroke-width": "1",
  }));

  // reference level after the step (dashed) and before it (dotted)
  svg.appendChild(svgElement("line", {
    x1: String(margin), x2: String(width - margin),
    y1: String(yOf(spec.rEnd)), y2: String(yOf(spec.rEnd)),
    stroke: "#b34444", "stroke-dasharray": "6 4", class: "reference-line",
  }));
  svg.appendChild(svgElement("line", {
    x1: String(margin), x2: String(width - margin),
    y1: String(yOf(spec.rStart)), y2: String(yOf(spec.rStart)),
    stroke: "#b3a044", "stroke-dasharray": "2 4", class: "reference-start",
  }));

  const points = spec.t
    .map((t, i) => `${xOf(t).toFixed(2)},${yOf(spec.y[i] ?? 0).toFixed(2)}`)
    .join(" ");
  svg.appendChild(svgElement("polyline", {
    points,
    fill: "none",
    stroke: "#2b6cb0",
    "stroke-width": "1.5",
    class: "trace",
  }));

  // window end marker
  svg.appendChild(svgElement("line", {
    x1: String(xOf(tEnd)), x2: String(xOf(tEnd)),
    y1: String(margin), y2: String(height - margin),
    stroke: "#888", "stroke-dasharray": "3 3", class: "window-marker",
  }));

  const caption = svgElement("text", {
    x: String(margin), y: String(margin - 8),
    "font-size": "12", fill: "#333",
  });
  caption.textContent = spec.label;
  svg.appendChild(caption);
  return svg;
}

/** Both stacked charts of one queue item on a shared time axis. */
export function renderTrajectoryView(
  samples: [number, number, number, number, number][],
  r1: [number, number],
  r2: [number, number],
  window: number,
  options: ChartOptions = {},
): DocumentFragment {
  const t = samples.map((row) => row[0]);
  const fragment = document.createDocumentFragment();
  fragment.appendChild(renderChart(
    { t, y: samples.map((row) => row[1]), rStart: r1[0], rEnd: r1[1],
      label: "boost pressure y1 vs r1", window },
    options,
  ));
  fragment.appendChild(renderChart(
    { t, y: samples.map((row) => row[2]), rStart: r2[0], rEnd: r2[1],
      label: "EGR rate y2 vs r2", window },
    options,
  ));
  return fragment;
}
