/// <reference types="vitest/config" />
import { defineConfig } from "vite";

// during development the run service is expected on :8080
const SERVICE = "http://127.0.0.1:8080";

export default defineConfig({
  server: {
    proxy: {
      "/ask": SERVICE,
      "/runs": SERVICE,
      "/kg": SERVICE,
    },
  },
  test: {
    environment: "happy-dom",
    include: ["tests/**/*.test.ts"],
  },
});
