import { AnnotationApi } from "./api.js";
import { AnnotatorApp } from "./ui.js";

const base = (window as unknown as { ALSEQ_API?: string }).ALSEQ_API ?? "";
const app = new AnnotatorApp(
  document.getElementById("app")!,
  new AnnotationApi(base),
);
void app.start();
