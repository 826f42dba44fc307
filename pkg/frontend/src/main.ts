import { ApiClient } from "./api.js";
import { App } from "./app.js";
import "./style.css";

const root = document.querySelector<HTMLElement>("#app");
if (root) {
  const app = new App(root, new ApiClient(""));
  const runId = new URLSearchParams(window.location.search).get("run");
  if (runId) void app.loadRun(runId);
}
