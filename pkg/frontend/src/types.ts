// Wire types of the inference service.

export interface TopKEntry {
  class_name: string;
  probability: number;
}

export interface ClassifyResponse {
  model: string;
  top_k: TopKEntry[];
  latency_ms: number;
}

export interface SpeciesInfo {
  name: string;
  description: string;
}

export interface ServiceErrorBody {
  code: string;
  message: string;
}

export interface ModelInfo {
  architecture: string;
  head: string;
  input_size: number[];
  num_classes: number;
  parameters: { total: number; trainable: number; non_trainable: number };
}
