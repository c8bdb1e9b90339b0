import { defineConfig } from "vitest/config";

export default defineConfig({
  base: "/ui/",
  test: {
    environment: "happy-dom",
    testTimeout: 120_000,
    hookTimeout: 180_000,
  },
});
