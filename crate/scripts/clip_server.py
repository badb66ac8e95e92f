"""Serve a CLIP model over the HTTP embedding protocol used by `backend = remote`.

    pip install fastapi uvicorn transformers torch pillow
    python scripts/clip_server.py --model openai/clip-vit-base-patch32 --port 8500

then point convis at it:

    convis --backend remote:http://127.0.0.1:8500 ...
    CONVIS_REMOTE_URL=http://127.0.0.1:8500 cargo test -p convis-cli --test acceptance
"""

import argparse
import base64
import io

import torch
import uvicorn
from fastapi import FastAPI
from PIL import Image
from pydantic import BaseModel
from transformers import CLIPModel, CLIPProcessor


class Texts(BaseModel):
    texts: list[str]


class Images(BaseModel):
    images_b64: list[str]


def build_app(name: str, device: str) -> FastAPI:
    model = CLIPModel.from_pretrained(name).to(device).eval()
    proc = CLIPProcessor.from_pretrained(name)
    app = FastAPI()

    def out(t: torch.Tensor) -> dict:
        return {"vectors": torch.nn.functional.normalize(t, dim=-1).cpu().tolist()}

    @app.post("/embed/text")
    @torch.no_grad()
    def embed_text(req: Texts):
        batch = proc(text=req.texts, return_tensors="pt", padding=True, truncation=True).to(device)
        return out(model.get_text_features(**batch))

    @app.post("/embed/image")
    @torch.no_grad()
    def embed_image(req: Images):
        images = [Image.open(io.BytesIO(base64.b64decode(s))).convert("RGB") for s in req.images_b64]
        batch = proc(images=images, return_tensors="pt").to(device)
        return out(model.get_image_features(**batch))

    return app


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--model", default="openai/clip-vit-base-patch32")
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8500)
    ap.add_argument("--device", default="cuda" if torch.cuda.is_available() else "cpu")
    args = ap.parse_args()
    uvicorn.run(build_app(args.model, args.device), host=args.host, port=args.port)


if __name__ == "__main__":
    main()
