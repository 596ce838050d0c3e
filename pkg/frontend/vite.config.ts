/// <reference types="vitest/config" />
import { defineConfig } from "vite";

export default defineConfig({
  server: {
    // dev convenience: point the API at a locally running
    // `tofbench serve --ui --http-port 8080`
    proxy: {
      "/api": {
        target: "http://127.0.0.1:8080",
        ws: true,
      },
    },
  },
  test: {
    environment: "jsdom",
    setupFiles: ["./tests/setup.ts"],
    testTimeout: 60_000,
    hookTimeout: 120_000,
    // the coordination suite drives one pair of real servers; parallel
    // files would race on them
    fileParallelism: false,
  },
});
