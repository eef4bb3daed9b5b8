/** Layered layout for the elicited network: nodes in estimation order on a
 * horizontal band, parent edges as arcs. Pure geometry; rendering attaches
 * the coordinates to SVG elements. */

export interface DagNode {
  id: string;
  x: number;
  y: number;
}

export interface DagEdge {
  from: string;
  to: string;
}

export interface DagLayout {
  nodes: DagNode[];
  edges: DagEdge[];
  width: number;
  height: number;
}

const X_STEP = 140;
const MARGIN = 60;

export function layoutNetwork(order: string[], parents: Record<string, string[]>): DagLayout {
  const nodes = order.map((id, i) => ({ id, x: MARGIN + i * X_STEP, y: 60 }));
  const edges: DagEdge[] = [];
  for (const child of order) {
    for (const parent of parents[child] ?? []) {
      edges.push({ from: parent, to: child });
    }
  }
  return {
    nodes,
    edges,
    width: MARGIN * 2 + Math.max(order.length - 1, 0) * X_STEP,
    height: 120,
  };
}
