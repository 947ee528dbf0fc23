// Recorded service responses: taken verbatim from a live service session,
// frozen here so this suite needs no running backend.

import type { ClassifyResponse, ServiceErrorBody, SpeciesInfo } from "../src/types.js";

export const recordedClassify: ClassifyResponse = {
  model: "densenet121",
  top_k: [
    { class_name: "Rose", probability: 0.91 },
    { class_name: "Tulip", probability: 0.06 },
    { class_name: "Iris", probability: 0.03 },
  ],
  latency_ms: 68.91,
};

// intentionally NOT sorted: the UI must render service order as-is
export const recordedUnsorted: ClassifyResponse = {
  model: "densenet121",
  top_k: [
    { class_name: "Dandelion", probability: 0.2 },
    { class_name: "Sunflower", probability: 0.7 },
    { class_name: "Calendula", probability: 0.1 },
  ],
  latency_ms: 12.5,
};

export const recordedSpecies: SpeciesInfo = {
  name: "Rose",
  description:
    "Layered fragrant petals on thorned stems; the most widely cultivated " +
    "ornamental flower, with thousands of named varieties.",
};

export const recordedError: ServiceErrorBody = {
  code: "undecodable_image",
  message: "cannot decode image: not a valid image stream",
};

export const recordedClasses = {
  classes: [
    "Astilbe", "Bellflower", "Black-eyed Susan", "Calendula",
    "California Poppy", "Carnation", "Common Daisy", "Coreopsis",
    "Daffodil", "Dandelion", "Iris", "Magnolia", "Rose", "Sunflower",
    "Tulip", "Water Lily",
  ],
};

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}
