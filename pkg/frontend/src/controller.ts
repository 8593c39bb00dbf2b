/** Session lifecycle and the single-in-flight-request rule. */

import { ServiceClient } from "./api.js";
import {
  applyReply,
  beginSend,
  canSend,
  failSend,
  newSessionState,
  type ChatViewState,
} from "./state.js";

export class ChatController {
  state: ChatViewState;

  private constructor(
    private readonly client: ServiceClient,
    sessionId: string,
    private readonly lambda: number,
  ) {
    this.state = newSessionState(sessionId, lambda);
  }

  /** Reads the advertised decay, then opens a session. */
  static async create(client: ServiceClient): Promise<ChatController> {
    const health = await client.getHealth();
    const session = await client.createSession();
    return new ChatController(client, session.id, health.config.lambda);
  }

  async send(text: string): Promise<ChatViewState> {
    if (!canSend(this.state, text)) {
      return this.state;
    }
    this.state = beginSend(this.state, text);
    try {
      const reply = await this.client.sendMessage(this.state.sessionId, text);
      this.state = applyReply(this.state, reply);
    } catch (err) {
      const message = err instanceof Error ? err.message : String(err);
      this.state = failSend(this.state, text, message);
    }
    return this.state;
  }

  async retry(): Promise<ChatViewState> {
    const text = this.state.failedText;
    if (text === null) {
      return this.state;
    }
    return this.send(text);
  }

  /** Fresh id, cleared view; the old session stays retrievable server-side. */
  async newSession(): Promise<ChatViewState> {
    const session = await this.client.createSession();
    this.state = newSessionState(session.id, this.lambda);
    return this.state;
  }
}
