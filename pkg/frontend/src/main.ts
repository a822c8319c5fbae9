import { boot } from "./app.js";

const params = new URLSearchParams(window.location.search);
const baseUrl = params.get("service") ?? "http://127.0.0.1:8765";

boot(document, baseUrl).catch((err) => {
  const root = document.getElementById("app");
  if (root) {
    root.textContent = `Could not reach the protection service at ${baseUrl}: ${err}`;
  }
});
