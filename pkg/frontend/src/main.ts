import { ApiClient } from "./api"
import { dragToBox, imageToCanvas } from "./coords"
import { blendHeatmap } from "./heatmap"
import { SessionController } from "./session"
import type { Point } from "./types"

const api = new ApiClient("")
const session = new SessionController(api)

const canvas = document.getElementById("canvas") as HTMLCanvasElement
const ctx = canvas.getContext("2d")!
const fileInput = document.getElementById("file") as HTMLInputElement
const zoomSelect = document.getElementById("zoom") as HTMLSelectElement
const kInput = document.getElementById("k") as HTMLInputElement
const opacityInput = document.getElementById("opacity") as HTMLInputElement
const queryButton = document.getElementById("query") as HTMLButtonElement
const undoButton = document.getElementById("undo") as HTMLButtonElement
const compositeButton = document.getElementById("composite") as HTMLButtonElement
const resultsDiv = document.getElementById("results") as HTMLDivElement
const previewImg = document.getElementById("preview") as HTMLImageElement
const toastDiv = document.getElementById("toast") as HTMLDivElement

let backgroundImage: HTMLImageElement | null = null
let heatmapImage: HTMLImageElement | null = null
let dragStart: Point | null = null

function zoom(): number {
  return parseInt(zoomSelect.value, 10)
}

function toast(message: string): void {
  toastDiv.textContent = message
  toastDiv.classList.add("visible")
  setTimeout(() => toastDiv.classList.remove("visible"), 2500)
}

function redraw(): void {
  if (!backgroundImage || !session.state.background) return
  const { width, height } = session.state.background
  canvas.width = width * zoom()
  canvas.height = height * zoom()
  ctx.imageSmoothingEnabled = false
  ctx.drawImage(backgroundImage, 0, 0, canvas.width, canvas.height)

  if (heatmapImage) {
    const off = document.createElement("canvas")
    off.width = width
    off.height = height
    const offCtx = off.getContext("2d")!
    offCtx.drawImage(backgroundImage, 0, 0, width, height)
    const bg = offCtx.getImageData(0, 0, width, height)
    offCtx.drawImage(heatmapImage, 0, 0, width, height)
    const heatRgba = offCtx.getImageData(0, 0, width, height)
    const gray = new Uint8ClampedArray(width * height)
    for (let i = 0; i < gray.length; i++) gray[i] = heatRgba.data[i * 4]
    const blended = blendHeatmap(bg.data, gray, parseFloat(opacityInput.value))
    offCtx.putImageData(new ImageData(blended, width, height), 0, 0)
    ctx.drawImage(off, 0, 0, canvas.width, canvas.height)
  }

  if (session.state.box) {
    const b = session.state.box
    const tl = imageToCanvas({ x: b.left, y: b.top }, zoom())
    ctx.strokeStyle = "#00e5ff"
    ctx.lineWidth = 2
    ctx.strokeRect(tl.x, tl.y, b.width * zoom(), b.height * zoom())
  }
}

function renderResults(): void {
  resultsDiv.innerHTML = ""
  for (const result of session.state.results) {
    const cell = document.createElement("div")
    cell.className = "result" + (session.state.selected === result.id ? " selected" : "")
    const img = document.createElement("img")
    img.src = result.thumbnail_url
    const label = document.createElement("span")
    label.textContent = result.score.toFixed(3)
    cell.append(img, label)
    cell.onclick = () => {
      session.selectResult(result.id)
      renderResults()
    }
    resultsDiv.appendChild(cell)
  }
}

fileInput.onchange = () => {
  const file = fileInput.files?.[0]
  if (!file) return
  const reader = new FileReader()
  reader.onload = () => {
    const dataUrl = reader.result as string
    const img = new Image()
    img.onload = () => {
      backgroundImage = img
      heatmapImage = null
      session.loadBackground(img.naturalWidth, img.naturalHeight, dataUrl, dataUrl.split(",")[1])
      redraw()
    }
    img.src = dataUrl
  }
  reader.readAsDataURL(file)
}

canvas.onmousedown = (e) => {
  dragStart = { x: e.offsetX, y: e.offsetY }
}

canvas.onmouseup = (e) => {
  if (!dragStart || !session.state.background) return
  const { width, height } = session.state.background
  const box = dragToBox(dragStart, { x: e.offsetX, y: e.offsetY }, zoom(), width, height)
  dragStart = null
  if (box) {
    session.setBox(box)
    redraw()
  }
}

document.addEventListener("keydown", (e) => {
  const moves: Record<string, [number, number]> = {
    ArrowLeft: [-1, 0],
    ArrowRight: [1, 0],
    ArrowUp: [0, -1],
    ArrowDown: [0, 1],
  }
  const move = moves[e.key]
  if (move && session.state.box) {
    session.nudgeBox(move[0], move[1])
    redraw()
    e.preventDefault()
  }
})

queryButton.onclick = async () => {
  try {
    const applied = await session.runQuery(parseInt(kInput.value, 10))
    if (!applied) return
    if (session.state.heatmapB64) {
      const img = new Image()
      img.onload = () => {
        heatmapImage = img
        redraw()
      }
      img.src = `data:image/png;base64,${session.state.heatmapB64}`
    }
    renderResults()
    redraw()
  } catch (err) {
    toast(`query failed: ${err}`)
  }
}

undoButton.onclick = () => {
  session.undo()
  renderResults()
  redraw()
}

compositeButton.onclick = async () => {
  try {
    const bytes = await session.previewComposite()
    previewImg.src = URL.createObjectURL(new Blob([bytes], { type: "image/png" }))
  } catch (err) {
    toast(`composite failed: ${err}`)
  }
}

zoomSelect.onchange = redraw
opacityInput.oninput = redraw
