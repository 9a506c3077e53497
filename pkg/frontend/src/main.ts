import { LabelingApi } from "./api.js";
import { GradingApp } from "./app.js";

function serviceBase(): string {
  const params = new URLSearchParams(window.location.search);
  return params.get("service") ?? "";
}

window.addEventListener("DOMContentLoaded", () => {
  const root = document.getElementById("app");
  if (root === null) {
    throw new Error("missing #app container");
  }
  const app = new GradingApp(root, new LabelingApi(serviceBase()));
  void app.start();
});
