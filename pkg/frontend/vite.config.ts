import { defineConfig } from "vitest/config";

export default defineConfig({
  build: {
    outDir: "dist",
  },
  server: {
    proxy: {
      "/rank": "http://127.0.0.1:8000",
      "/explain": "http://127.0.0.1:8000",
      "/audit": "http://127.0.0.1:8000",
      "/answers": "http://127.0.0.1:8000",
      "/corpus": "http://127.0.0.1:8000",
    },
  },
  test: {
    environment: "jsdom",
    testTimeout: 60000,
    hookTimeout: 240000,
  },
});
