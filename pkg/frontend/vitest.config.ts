import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "happy-dom",
    environmentOptions: {
      happyDOM: {
        // same origin as the integration test's spawned service
        url: "http://127.0.0.1:8741",
      },
    },
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
