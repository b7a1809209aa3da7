from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .config import settings
from .errors import InputError, NumericalError
from .routes import router

import logging

logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO))
logger = logging.getLogger(__name__)


app = FastAPI(title="cellPCA API")

app.add_middleware(
    CORSMiddleware,
    allow_origins=settings.CORS_ORIGINS,
    allow_methods=["*"],
    allow_headers=["*"],
)


@app.exception_handler(InputError)
async def input_error_handler(request: Request, exc: InputError):
    return JSONResponse({"detail": str(exc), "error": type(exc).__name__}, status_code=422)


@app.exception_handler(NumericalError)
async def numerical_error_handler(request: Request, exc: NumericalError):
    logger.error(f"❌ Numerical failure on {request.url.path}: {exc}")
    return JSONResponse({"detail": str(exc), "error": type(exc).__name__}, status_code=500)


@app.exception_handler(Exception)
async def all_exceptions_handler(request: Request, exc: Exception):
    logger.exception(f"❌ Unhandled error on {request.url.path}")
    return JSONResponse({"detail": str(exc)}, status_code=500)


app.include_router(router)


@app.get("/health")
async def health():
    return {"status": "ok"}


if __name__ == "__main__":
    import uvicorn

    uvicorn.run(app, host=settings.APP_HOST, port=settings.APP_PORT)
