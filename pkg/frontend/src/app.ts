// Page wiring: capture or upload a photo, submit it, show the ranked
// predictions, latency, and the species card for the top class.

import { ApiClient, NetworkError, ServiceApiError } from "./api.js";
import { captureFrame, openCameraStream, prepareUpload, stopStream } from "./camera.js";
import {
  renderBusy,
  renderError,
  renderPrediction,
  renderSpeciesCard,
} from "./render.js";

const api = new ApiClient();

let pending = false;
let lastImage: Blob | null = null;
let activeStream: MediaStream | null = null;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setBusy(busy: boolean): void {
  pending = busy;
  el<HTMLButtonElement>("upload-button").disabled = busy;
  el<HTMLButtonElement>("camera-button").disabled = busy;
  if (busy) el("results").innerHTML = renderBusy();
}

function showPreview(image: Blob): void {
  const preview = el<HTMLImageElement>("preview");
  preview.src = URL.createObjectURL(image);
  preview.hidden = false;
}

async function submit(image: Blob): Promise<void> {
  if (pending) return; // one in-flight classification at a time
  lastImage = image;
  showPreview(image);
  setBusy(true);
  const results = el("results");
  const card = el("species");
  card.innerHTML = "";
  try {
    const prediction = await api.classify(image, 3);
    results.innerHTML = renderPrediction(prediction);
    const top1 = prediction.top_k[0];
    if (top1) {
      try {
        card.innerHTML = renderSpeciesCard(await api.species(top1.class_name));
      } catch {
        card.innerHTML = ""; // card is best-effort; prediction already shown
      }
    }
  } catch (err) {
    if (err instanceof ServiceApiError) {
      results.innerHTML = renderError(err.message, false);
    } else if (err instanceof NetworkError) {
      results.innerHTML = renderError("Service unreachable.", true);
      results
        .querySelector(".retry-button")
        ?.addEventListener("click", () => lastImage && submit(lastImage));
    } else {
      results.innerHTML = renderError(String(err), false);
    }
  } finally {
    setBusy(false);
  }
}

async function onFileChosen(input: HTMLInputElement): Promise<void> {
  const file = input.files?.[0];
  if (!file) return;
  input.value = "";
  await submit(await prepareUpload(file));
}

async function toggleCamera(): Promise<void> {
  const video = el<HTMLVideoElement>("camera-view");
  const shutter = el<HTMLButtonElement>("shutter-button");
  if (activeStream) {
    stopStream(activeStream);
    activeStream = null;
    video.hidden = true;
    shutter.hidden = true;
    return;
  }
  const stream = await openCameraStream();
  if (!stream) {
    // permission denied or no camera: upload stays available
    el("results").innerHTML = renderError(
      "Camera unavailable; choose a photo instead.",
      false,
    );
    return;
  }
  activeStream = stream;
  video.srcObject = stream;
  video.hidden = false;
  shutter.hidden = false;
  await video.play();
}

async function onShutter(): Promise<void> {
  const video = el<HTMLVideoElement>("camera-view");
  if (!activeStream) return;
  const frame = await captureFrame(video);
  stopStream(activeStream);
  activeStream = null;
  video.hidden = true;
  el<HTMLButtonElement>("shutter-button").hidden = true;
  await submit(frame);
}

export function init(): void {
  const fileInput = el<HTMLInputElement>("file-input");
  el<HTMLButtonElement>("upload-button").addEventListener("click", () =>
    fileInput.click(),
  );
  fileInput.addEventListener("change", () => void onFileChosen(fileInput));
  el<HTMLButtonElement>("camera-button").addEventListener("click", () =>
    void toggleCamera(),
  );
  el<HTMLButtonElement>("shutter-button").addEventListener("click", () =>
    void onShutter(),
  );
  void api.health().then((ok) => {
    if (!ok) {
      el("results").innerHTML = renderError(
        "Service unreachable. Start it with: floranet serve --ckpt <model.ckpt>",
        false,
      );
    }
  });
}

init();
