import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    environment: "jsdom",
    include: ["tests/**/*.test.ts"],
    // the service round trip spawns the backend and waits for its health
    // endpoint, which dominates the suite's wall time
    testTimeout: 120_000,
    hookTimeout: 120_000,
  },
});
