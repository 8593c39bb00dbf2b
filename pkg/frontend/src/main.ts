/** Page wiring: one controller per tab, re-render after every transition. */

import { ServiceClient } from "./api.js";
import { ChatController } from "./controller.js";
import { render, renderConfig } from "./ui.js";

function serviceBase(): string {
  // same origin by default; ?service=http://host:port overrides for dev
  const override = new URLSearchParams(window.location.search).get("service");
  return override ?? "";
}

async function boot(): Promise<void> {
  const client = new ServiceClient(serviceBase());
  renderConfig(await client.getHealth());
  const controller = await ChatController.create(client);

  const form = document.getElementById("compose") as HTMLFormElement;
  const input = document.getElementById("input") as HTMLInputElement;

  const refresh = () => render(controller.state);

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const text = input.value;
    input.value = "";
    refresh();
    void controller.send(text).then(refresh);
  });
  input.addEventListener("input", refresh);

  const newButton = document.getElementById("new-session") as HTMLButtonElement;
  newButton.addEventListener("click", () => {
    void controller.newSession().then(refresh);
  });

  // the retry button is created on demand inside #error
  document.getElementById("error")!.addEventListener("click", (event) => {
    if ((event.target as HTMLElement).id === "retry") {
      void controller.retry().then(refresh);
    }
  });

  refresh();
}

void boot().catch((err) => {
  const banner = document.getElementById("error");
  if (banner) {
    banner.textContent = `failed to reach the service: ${String(err)}`;
  }
});
